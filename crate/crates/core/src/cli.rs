//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! unreadable or invalid data files.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{StabilityInputs, StabilityReport};
use crate::config::{ConfigError, ScenarioConfig};
use crate::demand::{estimate_demand, RequestTrace};
use crate::graph::{GraphDocument, RoadGraph};
use crate::matching::{solve_assignment, CostMatrix};
use crate::sim::{
    classify_stability, run_ensemble_with, run_once, Classification, RunSummary, SimError,
};
use crate::transport::GroundMetric;

/// Writes to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Demand(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(
    name = "fleet-stability",
    version,
    about = "Pickup-and-delivery fleet simulator and stability bounds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    GraphHops,
    Euclidean,
}

impl From<MetricArg> for GroundMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::GraphHops => GroundMetric::GraphHops,
            MetricArg::Euclidean => GroundMetric::Euclidean,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a demand model from a request trace.
    Estimate(EstimateArgs),
    /// Compute fleet-size bounds and the adversarial threshold for a scenario.
    Analyze(AnalyzeArgs),
    /// Run a seeded simulation ensemble and classify its stability.
    Simulate(SimulateArgs),
    /// Write a k-by-k grid graph.
    Gridgen(GridgenArgs),
    /// Solve a standalone assignment problem from a cost-matrix file.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    /// Demand model output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "graph-hops")]
    pub metric: MetricArg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Output directory; defaults to the config's `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridgenArgs {
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub costs: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Gridgen(a) => cmd_gridgen(&a),
        Command::Solve(a) => cmd_solve(&a),
    }
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let data = |e: &dyn std::fmt::Display| CliError::Data(e.to_string());
    let g = RoadGraph::load(&a.graph).map_err(|e| data(&e))?;
    let trace = RequestTrace::load(&a.trace).map_err(|e| data(&e))?;
    let m = estimate_demand(&trace, &g, None).map_err(|e| data(&e))?;
    let i = StabilityInputs::from_model(&m, &g, a.metric.into()).map_err(|e| data(&e))?;
    say!("requests          {}", trace.len());
    say!("E[eta]            {:.4}", i.e_eta);
    say!("E[d(xi,rho)]      {:.4}", i.e_xi_rho);
    say!("E[d(v_rand,rho)]  {:.4}", i.e_vrand_rho);
    say!("E[d(rho,delta)]   {:.4}", i.e_rho_delta);
    say!("WD(delta,rho)     {:.4}", i.wd);
    match &a.out {
        Some(p) => write_file(p, &m.to_json()),
        None => {
            say!("{}", m.to_json());
            Ok(())
        }
    }
}

fn load_config(path: &Path, metric: Option<MetricArg>) -> Result<ScenarioConfig, CliError> {
    let mut c = ScenarioConfig::load(path)?;
    if let Some(m) = metric {
        c.analysis.metric = m.into();
    }
    Ok(c)
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let c = load_config(&a.config, a.metric)?;
    let report = c.report()?;
    if report.f_threshold.is_none() {
        return Err(CliError::Config(format!(
            "instability threshold is undefined for delay {} and expected arrivals {}",
            report.delta, report.e_eta
        )));
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    say!("{}", report.table().trim_end());
    say!("{json}");
    let dir = a.out.clone().unwrap_or_else(|| c.output.dir.clone());
    write_file(&dir.join("report.json"), &format!("{json}\n"))
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    config: &'a ScenarioConfig,
    fleet_size: usize,
    adversaries: usize,
    horizon: u64,
    runs: usize,
    terminal_mean_outstanding: f64,
    final_mean_outstanding: f64,
    final_std_outstanding: f64,
    classification: Option<Classification>,
    bounds: Option<StabilityReport>,
    per_run: &'a [RunSummary],
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut c = load_config(&a.config, a.metric)?;
    if let Some(s) = a.seed {
        c.simulation.seed = s;
    }
    if let Some(r) = a.runs {
        c.simulation.runs = r;
    }
    if let Some(h) = a.horizon {
        c.simulation.horizon = h;
    }
    if let Some(o) = &a.out {
        c.output.dir = o.clone();
    }
    c.validate()?;
    let sc = c.scenario()?;
    let th = c.stability;
    let series = run_ensemble_with(&sc, th.terminal_window)?;
    let classification = match classify_stability(&series.mean, &th) {
        Ok(k) => Some(k),
        Err(SimError::SeriesTooShort { len, min }) => {
            eprintln!("warning: horizon {len} is shorter than {min}; stability not classified");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let bounds = c.report().ok();
    let last = series.len() - 1;
    let summary = SimulationSummary {
        config: &c,
        fleet_size: sc.fleet.size,
        adversaries: sc.fleet.adversaries,
        horizon: sc.horizon,
        runs: sc.runs,
        terminal_mean_outstanding: series.terminal_mean(th.terminal_window),
        final_mean_outstanding: series.mean[last],
        final_std_outstanding: series.std[last],
        classification,
        bounds,
        per_run: &series.runs,
    };
    let dir = &c.output.dir;
    write_file(&dir.join("series.csv"), &series.to_csv())?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), &format!("{json}\n"))?;
    if c.output.event_log {
        let mut first = sc.clone();
        first.record_events = true;
        let m = run_once(&first, sc.run_seed(0))?;
        let mut log = String::from("t,event,agent,request\n");
        for e in &m.events {
            let _ = writeln!(log, "{e}");
        }
        write_file(&dir.join("events.csv"), &log)?;
    }
    say!(
        "{} N={} adversaries={} runs={} T={}",
        sc.policy.short_name(),
        sc.fleet.size,
        sc.fleet.adversaries,
        sc.runs,
        sc.horizon
    );
    say!(
        "terminal mean outstanding {:.3}",
        summary.terminal_mean_outstanding
    );
    match classification {
        Some(k) => say!("{} (slope {:.4})", k.class.as_str(), k.slope),
        None => say!("unclassified"),
    }
    Ok(())
}

pub fn cmd_gridgen(a: &GridgenArgs) -> Result<(), CliError> {
    let doc = GraphDocument::grid(a.k).map_err(|e| CliError::Config(e.to_string()))?;
    let json = doc.to_json();
    match &a.out {
        Some(p) => write_file(p, &format!("{json}\n")),
        None => {
            say!("{json}");
            Ok(())
        }
    }
}

pub fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.costs)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.costs.display())))?;
    let c = CostMatrix::parse(&text).map_err(|e| CliError::Data(e.to_string()))?;
    let m = solve_assignment(&c).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = String::from("row,col,cost\n");
    for &(i, j) in &m.pairs {
        let _ = writeln!(out, "{i},{j},{}", c.get(i, j));
    }
    let _ = writeln!(out, "total,{}", m.total_cost);
    match &a.out {
        Some(p) => write_file(p, &out),
        None => {
            say!("{}", out.trim_end());
            Ok(())
        }
    }
}
