//! TOML scenario files shared by `analyze` and `simulate`.
//!
//! ```toml
//! [graph]
//! grid = 15                  # or: file = "graph.json"
//!
//! [demand]
//! uniform = true             # or: model = "demand.json" / trace = "trace.csv"
//! eta = { 1 = 1.0 }
//!
//! [simulation]
//! policy = "random-assignment"
//! fleet_size = "coop-bound"  # or an integer, or "robust-bound"
//! adversarial_proportion = 0.0
//! delay = 10
//! horizon = 2000
//! runs = 20
//! seed = 1
//!
//! [analysis]
//! f_max = 0.4
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{n_coop, n_robust, AnalysisError, StabilityInputs, StabilityReport};
use crate::demand::{estimate_demand, DemandError, DemandModel, Pmf, RequestTrace};
use crate::fleet::{AdversaryRounding, DelayMode, DelayPolicy, FleetComposition, FleetError};
use crate::graph::{GraphError, RoadGraph};
use crate::policy::PolicyKind;
use crate::sim::{Scenario, StabilityThresholds};
use crate::transport::GroundMetric;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("demand: {0}")]
    Demand(#[from] DemandError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("fleet: {0}")]
    Fleet(#[from] FleetError),
}

impl ConfigError {
    /// Whether the failure lies in a referenced data file rather than the config itself.
    pub fn is_data_error(&self) -> bool {
        matches!(self, ConfigError::Graph(_) | ConfigError::Demand(_))
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub graph: GraphSection,
    pub demand: DemandSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub stability: StabilityThresholds,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub uniform: bool,
    /// Arrivals pmf for uniform demand, keyed by count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FleetSize {
    Count(usize),
    Bound(FleetBound),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FleetBound {
    CoopBound,
    RobustBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub policy: PolicyKind,
    pub fleet_size: FleetSize,
    pub adversarial_proportion: f64,
    pub adversary_rounding: AdversaryRounding,
    pub delay: u32,
    pub delay_mode: DelayMode,
    pub horizon: u64,
    pub runs: usize,
    pub seed: u64,
    pub symmetric: bool,
    pub audit: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            policy: PolicyKind::RandomAssignment,
            fleet_size: FleetSize::Bound(FleetBound::CoopBound),
            adversarial_proportion: 0.0,
            adversary_rounding: AdversaryRounding::Exact,
            delay: 0,
            delay_mode: DelayMode::FixedMaximum,
            horizon: 720,
            runs: 20,
            seed: 0,
            symmetric: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Defaults to `simulation.delay`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Defaults to `simulation.adversarial_proportion`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_max: Option<f64>,
    pub metric: GroundMetric,
    /// Fleet size for the instability threshold; defaults to the cooperative bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_prime: Option<usize>,
    /// Use these expectations instead of computing them from the demand model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<StabilityInputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the per-event log of the first run.
    pub event_log: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            event_log: false,
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Parses `path` and rebases its relative paths onto the config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            c.rebase(base);
        }
        Ok(c)
    }

    fn rebase(&mut self, base: &Path) {
        for p in [
            self.graph.file.as_mut(),
            self.demand.model.as_mut(),
            self.demand.trace.as_mut(),
            Some(&mut self.output.dir),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.graph.file, self.graph.grid) {
            (Some(_), None) => {}
            (None, Some(k)) if k >= 2 => {}
            (None, Some(k)) => {
                return Err(invalid(format!("graph.grid must be at least 2, got {k}")))
            }
            _ => return Err(invalid("set exactly one of graph.file and graph.grid")),
        }
        let d = &self.demand;
        let sources = usize::from(d.model.is_some())
            + usize::from(d.trace.is_some())
            + usize::from(d.uniform);
        if sources != 1 {
            return Err(invalid(
                "set exactly one of demand.model, demand.trace and demand.uniform",
            ));
        }
        if d.eta.is_some() && !d.uniform {
            return Err(invalid("demand.eta only applies to uniform demand"));
        }
        let s = &self.simulation;
        if !(0.0..=1.0).contains(&s.adversarial_proportion) {
            return Err(invalid(format!(
                "simulation.adversarial_proportion {} is outside [0, 1]",
                s.adversarial_proportion
            )));
        }
        if s.horizon == 0 {
            return Err(invalid("simulation.horizon must be at least 1"));
        }
        if s.runs == 0 {
            return Err(invalid("simulation.runs must be at least 1"));
        }
        if s.fleet_size == FleetSize::Count(0) {
            return Err(invalid("simulation.fleet_size must be at least 1"));
        }
        self.stability
            .validate()
            .map_err(|e| invalid(format!("stability: {e}")))?;
        Ok(())
    }

    pub fn load_graph(&self) -> Result<RoadGraph, ConfigError> {
        Ok(match (&self.graph.file, self.graph.grid) {
            (Some(f), _) => RoadGraph::load(f)?,
            (None, Some(k)) => RoadGraph::grid(k)?,
            (None, None) => return Err(invalid("no graph source")),
        })
    }

    fn eta_pmf(&self) -> Result<Pmf<u32>, ConfigError> {
        let Some(eta) = &self.demand.eta else {
            return Ok(Pmf::point(1));
        };
        let masses = eta
            .iter()
            .map(|(k, &p)| {
                k.trim()
                    .parse::<u32>()
                    .map(|k| (k, p))
                    .map_err(|_| invalid(format!("demand.eta key '{k}' is not a count")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Pmf::new(masses).map_err(|e| invalid(format!("demand.eta: {e}")))
    }

    pub fn load_demand(&self, g: &RoadGraph) -> Result<DemandModel, ConfigError> {
        let d = &self.demand;
        let m = if let Some(path) = &d.model {
            DemandModel::load(path)?
        } else if let Some(path) = &d.trace {
            estimate_demand(&RequestTrace::load(path)?, g, None)?
        } else {
            DemandModel::uniform(g, self.eta_pmf()?)
        };
        m.validate_against(g)?;
        Ok(m)
    }

    pub fn delta(&self) -> f64 {
        self.analysis
            .delta
            .unwrap_or(f64::from(self.simulation.delay))
    }

    pub fn f_max(&self) -> f64 {
        self.analysis
            .f_max
            .unwrap_or(self.simulation.adversarial_proportion)
    }

    pub fn delay_policy(&self) -> DelayPolicy {
        DelayPolicy {
            mode: self.simulation.delay_mode,
            max_delay: self.simulation.delay,
        }
    }

    pub fn stability_inputs(
        &self,
        g: &RoadGraph,
        m: &DemandModel,
    ) -> Result<StabilityInputs, ConfigError> {
        match self.analysis.inputs {
            Some(i) => Ok(i),
            None => Ok(StabilityInputs::from_model(m, g, self.analysis.metric)?),
        }
    }

    /// Report for explicit inputs, or for the configured graph and demand.
    pub fn report(&self) -> Result<StabilityReport, ConfigError> {
        let inputs = match self.analysis.inputs {
            Some(i) => i,
            None => {
                let g = self.load_graph()?;
                let m = self.load_demand(&g)?;
                self.stability_inputs(&g, &m)?
            }
        };
        Ok(StabilityReport::from_inputs(
            inputs,
            self.delta(),
            self.f_max(),
            self.analysis.n_prime,
        )?)
    }

    /// Integer fleet size, resolving the bound keywords.
    pub fn resolve_fleet_size(&self, inputs: &StabilityInputs) -> Result<usize, ConfigError> {
        let n = match self.simulation.fleet_size {
            FleetSize::Count(n) => n,
            FleetSize::Bound(FleetBound::CoopBound) => n_coop(inputs),
            FleetSize::Bound(FleetBound::RobustBound) => {
                n_robust(inputs, self.delta(), self.simulation.adversarial_proportion)
            }
        };
        if n == 0 {
            return Err(invalid("resolved fleet size is 0"));
        }
        Ok(n)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let g = self.load_graph()?;
        let m = self.load_demand(&g)?;
        let n = match self.simulation.fleet_size {
            FleetSize::Count(n) => n,
            FleetSize::Bound(_) => self.resolve_fleet_size(&self.stability_inputs(&g, &m)?)?,
        };
        let s = &self.simulation;
        let fleet =
            FleetComposition::from_proportion(n, s.adversarial_proportion, s.adversary_rounding)?;
        let mut sc = Scenario::new(
            Arc::new(g),
            m,
            s.policy,
            fleet,
            self.delay_policy(),
            s.horizon,
        );
        sc.runs = s.runs;
        sc.master_seed = s.seed;
        sc.symmetric = s.symmetric;
        sc.audit = s.audit;
        Ok(sc)
    }
}
