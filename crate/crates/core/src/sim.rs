//! Discrete-time simulation loop, seeded ensembles and finite-horizon
//! stability classification.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{bind_sampler, ArrivalSampler, DemandError, DemandModel, Request};
use crate::fleet::{
    init_fleet, AgentClass, DelayPolicy, EventKind, FleetComposition, FleetError, FleetEvent,
};
use crate::graph::RoadGraph;
use crate::policy::{dispatch, dispatch_random, PolicyKind};

/// Independent rng streams inside one run.
mod stream {
    pub const ARRIVALS: u64 = 1;
    pub const FLEET: u64 = 2;
    pub const DISPATCH: u64 = 3;
    pub const DELAY: u64 = 4;
    pub const AUDIT: u64 = 5;
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("horizon must be at least 1 step")]
    ZeroHorizon,
    #[error("ensemble needs at least one run")]
    NoRuns,
    #[error("series has {len} steps, classification needs at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("invalid stability thresholds: {0}")]
    BadThresholds(String),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

/// Everything a run needs. The graph is shared between concurrent runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: Arc<RoadGraph>,
    pub demand: DemandModel,
    pub policy: PolicyKind,
    pub fleet: FleetComposition,
    pub delay: DelayPolicy,
    pub horizon: u64,
    pub runs: usize,
    pub master_seed: u64,
    /// Cooperative agents dwell too, so classes are indistinguishable.
    pub symmetric: bool,
    /// Under instantaneous assignment, also price a random decision each step.
    pub audit: bool,
    pub record_events: bool,
    /// No arrivals from this step on.
    pub arrivals_until: Option<u64>,
}

impl Scenario {
    pub fn new(
        graph: Arc<RoadGraph>,
        demand: DemandModel,
        policy: PolicyKind,
        fleet: FleetComposition,
        delay: DelayPolicy,
        horizon: u64,
    ) -> Self {
        Self {
            graph,
            demand,
            policy,
            fleet,
            delay,
            horizon,
            runs: 1,
            master_seed: 0,
            symmetric: false,
            audit: false,
            record_events: false,
            arrivals_until: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon == 0 {
            return Err(SimError::ZeroHorizon);
        }
        if self.runs == 0 {
            return Err(SimError::NoRuns);
        }
        if self.fleet.size == 0 {
            return Err(FleetError::EmptyFleet.into());
        }
        self.demand.validate_against(&self.graph)?;
        Ok(())
    }

    pub fn run_seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, index as u64)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Run seed: `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Assignment counts split by agent class and by whether it was the agent's
/// first request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentCounts {
    pub cooperative_first: u64,
    pub cooperative_next: u64,
    pub adversarial_first: u64,
    pub adversarial_next: u64,
}

impl AssignmentCounts {
    pub fn total(&self) -> u64 {
        self.cooperative_first
            + self.cooperative_next
            + self.adversarial_first
            + self.adversarial_next
    }

    pub fn adversarial(&self) -> u64 {
        self.adversarial_first + self.adversarial_next
    }

    fn record(&mut self, class: AgentClass, first: bool) {
        let slot = match (class, first) {
            (AgentClass::Cooperative, true) => &mut self.cooperative_first,
            (AgentClass::Cooperative, false) => &mut self.cooperative_next,
            (AgentClass::Adversarial, true) => &mut self.adversarial_first,
            (AgentClass::Adversarial, false) => &mut self.adversarial_next,
        };
        *slot += 1;
    }
}

/// Per-step comparison of the instantaneous decision with a counterfactual
/// random one on the same state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchAudit {
    pub steps: u64,
    pub violations: u64,
    pub instantaneous_cost: u64,
    pub random_cost: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationMetrics {
    pub seed: u64,
    /// Entered but not yet assigned, after dispatch at each step.
    pub outstanding: Vec<u32>,
    /// Entered but not yet picked up, at the end of each step.
    pub unpicked: Vec<u32>,
    pub entered: u64,
    pub completed: u64,
    /// Assigned and not yet delivered at the end of the horizon.
    pub in_flight: u64,
    pub assignments_by_class: AssignmentCounts,
    /// Running share of assignments that went to adversaries, one entry per assignment.
    pub adversary_assignment_fraction: Vec<f64>,
    /// Requests delivered by adversaries.
    pub adversary_served: u64,
    /// Total dwell of adversary-delivered requests.
    pub wasted_delay_total: u64,
    /// Total assignment-to-delivery time of delivered requests.
    pub service_time_total: u64,
    pub audit: Option<DispatchAudit>,
    pub events: Vec<FleetEvent>,
}

impl SimulationMetrics {
    pub fn assignments(&self) -> u64 {
        self.assignments_by_class.total()
    }

    pub fn adversary_fraction(&self) -> Option<f64> {
        self.adversary_assignment_fraction.last().copied()
    }
}

/// Executes `sc.horizon` steps: arrivals, dispatch, motion, bookkeeping.
pub fn run_once(sc: &Scenario, seed: u64) -> Result<SimulationMetrics, SimError> {
    sc.validate()?;
    let g = sc.graph.as_ref();
    let rng_for = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(s);
        r
    };
    let mut arrivals_rng = rng_for(stream::ARRIVALS);
    let mut fleet_rng = rng_for(stream::FLEET);
    let mut dispatch_rng = rng_for(stream::DISPATCH);
    let mut delay_rng = rng_for(stream::DELAY);
    let mut audit_rng = rng_for(stream::AUDIT);

    let mut sampler = ArrivalSampler::new(&sc.demand, g)?;
    let xi = bind_sampler(&sc.demand.p_xi, g);
    let mut fs = init_fleet(sc.fleet, &xi, &mut fleet_rng);
    fs.symmetric = sc.symmetric;

    let steps = sc.horizon as usize;
    let audit_on = sc.audit && sc.policy == PolicyKind::InstantaneousAssignment;
    let mut m = SimulationMetrics {
        seed,
        outstanding: Vec::with_capacity(steps),
        unpicked: Vec::with_capacity(steps),
        entered: 0,
        completed: 0,
        in_flight: 0,
        assignments_by_class: AssignmentCounts::default(),
        adversary_assignment_fraction: Vec::new(),
        adversary_served: 0,
        wasted_delay_total: 0,
        service_time_total: 0,
        audit: audit_on.then(DispatchAudit::default),
        events: Vec::new(),
    };
    // Unassigned requests, always sorted by id.
    let mut queue: Vec<Request> = Vec::new();
    let mut awaiting_pickup: u64 = 0;

    for step in 0..sc.horizon {
        let fresh = if sc.arrivals_until.is_some_and(|end| step >= end) {
            Vec::new()
        } else {
            sampler.sample(step, &mut arrivals_rng)
        };
        m.entered += fresh.len() as u64;
        queue.extend(fresh);

        let decision = dispatch(sc.policy, &fs, &queue, g, &mut dispatch_rng);
        if let Some(audit) = m.audit.as_mut() {
            if !decision.is_empty() {
                let ia = decision.cost(&fs, &queue, g);
                let ra = dispatch_random(&fs, &queue, &mut audit_rng).cost(&fs, &queue, g);
                audit.steps += 1;
                audit.instantaneous_cost += ia;
                audit.random_cost += ra;
                if ia > ra {
                    audit.violations += 1;
                }
            }
        }
        let mut taken = Vec::with_capacity(decision.len());
        for &(agent, rid) in &decision.pairs {
            let pos = queue
                .binary_search_by_key(&rid, |r| r.id)
                .expect("decision refers to a queued request");
            let first = fs.agents[agent.0 as usize].served == 0;
            let ev = fs.assign(agent, &queue[pos], g, &sc.delay, &mut delay_rng)?;
            let class = fs.agents[agent.0 as usize].class;
            m.assignments_by_class.record(class, first);
            m.adversary_assignment_fraction.push(
                m.assignments_by_class.adversarial() as f64 / m.assignments_by_class.total() as f64,
            );
            if sc.record_events {
                m.events.push(ev);
            }
            taken.push(pos);
        }
        awaiting_pickup += taken.len() as u64;
        taken.sort_unstable();
        for pos in taken.into_iter().rev() {
            queue.remove(pos);
        }

        let out = fs.step(g);
        awaiting_pickup -= out.pickups.len() as u64;
        for c in &out.completions {
            m.completed += 1;
            m.service_time_total += c.service_time();
            if c.class == AgentClass::Adversarial {
                m.adversary_served += 1;
                m.wasted_delay_total += u64::from(c.e_pick + c.e_drop);
            }
        }
        if sc.record_events {
            m.events.extend(out.pickups.iter().map(|p| FleetEvent {
                t: p.time,
                kind: EventKind::Pickup,
                agent: p.agent,
                request: p.request,
            }));
            m.events.extend(out.completions.iter().map(|c| FleetEvent {
                t: c.completed_at,
                kind: EventKind::Dropoff,
                agent: c.agent,
                request: c.request,
            }));
        }
        m.outstanding.push(queue.len() as u32);
        m.unpicked
            .push((queue.len() as u64 + awaiting_pickup) as u32);
    }
    m.in_flight = fs.agents.iter().filter(|a| !a.is_available()).count() as u64;
    Ok(m)
}

fn window_mean(xs: &[f64], fraction: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let w = ((xs.len() as f64 * fraction).ceil() as usize).clamp(1, xs.len());
    xs[xs.len() - w..].iter().sum::<f64>() / w as f64
}

/// Terminal statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub seed: u64,
    pub final_outstanding: u32,
    pub terminal_mean_outstanding: f64,
    pub entered: u64,
    pub completed: u64,
    pub in_flight: u64,
    pub assignments: AssignmentCounts,
    pub adversary_fraction: Option<f64>,
    pub adversary_served: u64,
    pub wasted_delay_total: u64,
    pub service_time_total: u64,
    pub audit: Option<DispatchAudit>,
}

impl RunSummary {
    fn new(index: usize, m: &SimulationMetrics, window: f64) -> Self {
        let series: Vec<f64> = m.outstanding.iter().map(|&x| f64::from(x)).collect();
        Self {
            index,
            seed: m.seed,
            final_outstanding: m.outstanding.last().copied().unwrap_or(0),
            terminal_mean_outstanding: window_mean(&series, window),
            entered: m.entered,
            completed: m.completed,
            in_flight: m.in_flight,
            assignments: m.assignments_by_class,
            adversary_fraction: m.adversary_fraction(),
            adversary_served: m.adversary_served,
            wasted_delay_total: m.wasted_delay_total,
            service_time_total: m.service_time_total,
            audit: m.audit,
        }
    }
}

/// Per-step mean and population standard deviation over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_unpicked: Vec<f64>,
    pub runs: Vec<RunSummary>,
}

impl AggregateSeries {
    pub fn from_runs(metrics: &[SimulationMetrics], terminal_window: f64) -> Self {
        let len = metrics
            .iter()
            .map(|m| m.outstanding.len())
            .min()
            .unwrap_or(0);
        let n = metrics.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        let mut mean_unpicked = vec![0.0; len];
        for t in 0..len {
            let mu = metrics
                .iter()
                .map(|m| f64::from(m.outstanding[t]))
                .sum::<f64>()
                / n;
            let var = metrics
                .iter()
                .map(|m| (f64::from(m.outstanding[t]) - mu).powi(2))
                .sum::<f64>()
                / n;
            mean[t] = mu;
            std[t] = var.sqrt();
            mean_unpicked[t] = metrics
                .iter()
                .map(|m| f64::from(m.unpicked[t]))
                .sum::<f64>()
                / n;
        }
        Self {
            mean,
            std,
            mean_unpicked,
            runs: metrics
                .iter()
                .enumerate()
                .map(|(i, m)| RunSummary::new(i, m, terminal_window))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Mean outstanding over the trailing `fraction` of the horizon.
    pub fn terminal_mean(&self, fraction: f64) -> f64 {
        window_mean(&self.mean, fraction)
    }

    /// `t,mean_outstanding,std_outstanding,mean_unpicked` with six decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 40 + 64);
        s.push_str("t,mean_outstanding,std_outstanding,mean_unpicked\n");
        for t in 0..self.len() {
            s.push_str(&format!(
                "{t},{:.6},{:.6},{:.6}\n",
                self.mean[t], self.std[t], self.mean_unpicked[t]
            ));
        }
        s
    }
}

/// Runs the ensemble in parallel; results are reduced in run-index order.
pub fn run_ensemble(sc: &Scenario) -> Result<AggregateSeries, SimError> {
    run_ensemble_with(sc, StabilityThresholds::default().terminal_window)
}

pub fn run_ensemble_with(sc: &Scenario, terminal_window: f64) -> Result<AggregateSeries, SimError> {
    sc.validate()?;
    let metrics = (0..sc.runs)
        .into_par_iter()
        .map(|i| run_once(sc, sc.run_seed(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AggregateSeries::from_runs(&metrics, terminal_window))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityThresholds {
    /// Slope of the final half, requests per step.
    pub slope: f64,
    /// Required growth of the terminal window over the first half.
    pub ratio: f64,
    /// Trailing share of the horizon averaged as the terminal value.
    pub terminal_window: f64,
    pub min_len: usize,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        Self {
            slope: 0.02,
            ratio: 2.0,
            terminal_window: 0.1,
            min_len: 100,
        }
    }
}

impl StabilityThresholds {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.slope.is_finite() || !self.ratio.is_finite() {
            return Err(SimError::BadThresholds(
                "slope and ratio must be finite".into(),
            ));
        }
        if !(self.terminal_window > 0.0 && self.terminal_window <= 0.5) {
            return Err(SimError::BadThresholds(format!(
                "terminal window {} must be in (0, 0.5]",
                self.terminal_window
            )));
        }
        if self.min_len < 2 {
            return Err(SimError::BadThresholds("min_len must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityClass {
    StableLike,
    UnstableLike,
}

impl StabilityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StabilityClass::StableLike => "stable-like",
            StabilityClass::UnstableLike => "unstable-like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: StabilityClass,
    pub slope: f64,
    pub terminal_mean: f64,
    pub first_half_mean: f64,
}

fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let x_bar = (n - 1.0) / 2.0;
    let y_bar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in ys.iter().enumerate() {
        let dx = i as f64 - x_bar;
        sxy += dx * (y - y_bar);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Unstable-like iff the final-half slope exceeds `slope` and the terminal
/// window mean exceeds `ratio` times the mean over the first half.
pub fn classify_stability(
    series: &[f64],
    th: &StabilityThresholds,
) -> Result<Classification, SimError> {
    th.validate()?;
    if series.len() < th.min_len {
        return Err(SimError::SeriesTooShort {
            len: series.len(),
            min: th.min_len,
        });
    }
    let half = series.len() / 2;
    let slope = ls_slope(&series[half..]);
    let terminal_mean = window_mean(series, th.terminal_window);
    let first_half_mean = series[..half].iter().sum::<f64>() / half as f64;
    let unstable = slope > th.slope && terminal_mean > th.ratio * first_half_mean;
    Ok(Classification {
        class: if unstable {
            StabilityClass::UnstableLike
        } else {
            StabilityClass::StableLike
        },
        slope,
        terminal_mean,
        first_half_mean,
    })
}
