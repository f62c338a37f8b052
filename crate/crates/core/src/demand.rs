//! Request model: empirical pmfs estimated from traces and seeded sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, NodeIdx, RoadGraph};

/// Normalisation tolerance for every probability mass function.
pub const PMF_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DemandError {
    #[error("probability mass function is empty")]
    EmptyPmf,
    #[error("probability for {key} is {value}; probabilities must be finite and non-negative")]
    BadProbability { key: String, value: f64 },
    #[error("probabilities sum to {0}, expected 1 within {PMF_TOLERANCE}")]
    NotNormalized(f64),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace line {line}: node {node} is not in the graph")]
    TraceUnknownNode { line: usize, node: NodeId },
    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error("{what} pmf references node {node} which is not in the graph")]
    SupportOutsideGraph { what: &'static str, node: NodeId },
    #[error("failed to read {0}")]
    Io(String),
    #[error("malformed demand model document: {0}")]
    Parse(String),
}

/// Probability mass function with keys kept in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<K, f64>", into = "BTreeMap<K, f64>")]
#[serde(bound(
    serialize = "K: Ord + Clone + Serialize",
    deserialize = "K: Ord + Clone + fmt::Display + Deserialize<'de>"
))]
pub struct Pmf<K: Ord + Clone> {
    keys: Vec<K>,
    probs: Vec<f64>,
}

impl<K: Ord + Clone + fmt::Display> Pmf<K> {
    /// Builds a pmf from explicit masses. Zero-mass keys are dropped.
    pub fn new(masses: impl IntoIterator<Item = (K, f64)>) -> Result<Self, DemandError> {
        let mut map: BTreeMap<K, f64> = BTreeMap::new();
        for (k, p) in masses {
            if !p.is_finite() || p < 0.0 {
                return Err(DemandError::BadProbability {
                    key: k.to_string(),
                    value: p,
                });
            }
            *map.entry(k).or_insert(0.0) += p;
        }
        map.retain(|_, p| *p > 0.0);
        if map.is_empty() {
            return Err(DemandError::EmptyPmf);
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(DemandError::NotNormalized(total));
        }
        let (keys, probs) = map.into_iter().unzip();
        Ok(Self { keys, probs })
    }

    /// Relative frequencies of the given counts.
    pub fn from_counts(counts: impl IntoIterator<Item = (K, u64)>) -> Result<Self, DemandError> {
        let mut map: BTreeMap<K, u64> = BTreeMap::new();
        for (k, c) in counts {
            *map.entry(k).or_insert(0) += c;
        }
        let total: u64 = map.values().sum();
        if total == 0 {
            return Err(DemandError::EmptyPmf);
        }
        Self::new(map.into_iter().map(|(k, c)| (k, c as f64 / total as f64)))
    }

    pub fn point(key: K) -> Self {
        Self {
            keys: vec![key],
            probs: vec![1.0],
        }
    }

    pub fn uniform(keys: impl IntoIterator<Item = K>) -> Result<Self, DemandError> {
        let keys: Vec<K> = keys.into_iter().collect();
        let w = 1.0 / keys.len() as f64;
        Self::new(keys.into_iter().map(|k| (k, w)))
    }
}

impl<K: Ord + Clone> Pmf<K> {
    pub fn prob(&self, key: &K) -> f64 {
        self.keys
            .binary_search(key)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> + '_ {
        self.keys.iter().zip(self.probs.iter().copied())
    }

    pub fn support(&self) -> &[K] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn sampler(&self) -> InverseCdf<K> {
        InverseCdf::new(self.iter().map(|(k, p)| (k.clone(), p)))
    }
}

impl Pmf<u32> {
    pub fn mean(&self) -> f64 {
        self.iter().map(|(&k, p)| k as f64 * p).sum()
    }
}

impl<K: Ord + Clone + fmt::Display> TryFrom<BTreeMap<K, f64>> for Pmf<K> {
    type Error = DemandError;

    fn try_from(map: BTreeMap<K, f64>) -> Result<Self, Self::Error> {
        Self::new(map)
    }
}

impl<K: Ord + Clone> From<Pmf<K>> for BTreeMap<K, f64> {
    fn from(p: Pmf<K>) -> Self {
        p.keys.into_iter().zip(p.probs).collect()
    }
}

/// Inverse-CDF sampler over a fixed key order.
#[derive(Debug, Clone)]
pub struct InverseCdf<T> {
    values: Vec<T>,
    cumulative: Vec<f64>,
}

impl<T: Clone> InverseCdf<T> {
    fn new(masses: impl IntoIterator<Item = (T, f64)>) -> Self {
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (v, p) in masses {
            acc += p;
            values.push(v);
            cumulative.push(acc);
        }
        Self { values, cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.gen::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.values[i.min(self.values.len() - 1)].clone()
    }
}

/// Request identifier; monotone in entry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId(pub u64);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Pickup-and-delivery request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: RequestId,
    pub pickup: NodeIdx,
    pub dropoff: NodeIdx,
    pub entry_time: u64,
    pub picked_up: bool,
}

impl Request {
    pub fn new(id: u64, pickup: NodeIdx, dropoff: NodeIdx, entry_time: u64) -> Self {
        Self {
            id: RequestId(id),
            pickup,
            dropoff,
            entry_time,
            picked_up: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub minute: u64,
    pub pickup: NodeId,
    pub dropoff: NodeId,
}

/// Historical request records, one per line as `minute,pickup_node,dropoff_node`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RequestTrace {
    pub records: Vec<TraceRecord>,
    /// 1-based source line of each record, for diagnostics.
    lines: Vec<usize>,
}

impl RequestTrace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        let lines = (1..=records.len()).collect();
        Self { records, lines }
    }

    /// Parses the delimited trace format. A first line whose leading field is
    /// not a number is treated as a header; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, DemandError> {
        let mut records = Vec::new();
        let mut lines = Vec::new();
        let mut first_row = true;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let row: Vec<&str> = raw.split(',').map(str::trim).collect();
            if std::mem::take(&mut first_row) && is_header_field(row[0]) {
                continue;
            }
            if row.len() != 3 {
                return Err(DemandError::TraceParse {
                    line,
                    message: format!("expected 3 fields, found {}", row.len()),
                });
            }
            let field = |i: usize, name: &str| -> Result<u64, DemandError> {
                row[i].parse().map_err(|_| DemandError::TraceParse {
                    line,
                    message: format!("{name} '{}' is not a non-negative integer", row[i]),
                })
            };
            let minute = field(0, "minute")?;
            let pickup = NodeId(field(1, "pickup node")? as u32);
            let dropoff = NodeId(field(2, "dropoff node")? as u32);
            records.push(TraceRecord {
                minute,
                pickup,
                dropoff,
            });
            lines.push(line);
        }
        Ok(Self { records, lines })
    }

    pub fn load(path: &Path) -> Result<Self, DemandError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DemandError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn line_of(&self, k: usize) -> usize {
        self.lines.get(k).copied().unwrap_or(k + 1)
    }
}

fn is_header_field(s: &str) -> bool {
    s.parse::<u64>().is_err() && s.chars().next().is_some_and(|c| c.is_alphabetic())
}

/// Empirical request distributions.
///
/// `p_vrand` (location of an agent that has already served a request) is not
/// stored: it is taken to be the drop-off distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandModel {
    pub p_eta: Pmf<u32>,
    pub p_rho: Pmf<NodeId>,
    pub p_delta: Pmf<NodeId>,
    pub p_xi: Pmf<NodeId>,
}

impl DemandModel {
    pub fn expected_eta(&self) -> f64 {
        self.p_eta.mean()
    }

    pub fn p_vrand(&self) -> &Pmf<NodeId> {
        &self.p_delta
    }

    /// Uniform pickups, drop-offs and initial locations over every node.
    pub fn uniform(g: &RoadGraph, p_eta: Pmf<u32>) -> Self {
        let nodes = Pmf::uniform(g.node_ids().iter().copied()).expect("graph has nodes");
        Self {
            p_eta,
            p_rho: nodes.clone(),
            p_delta: nodes.clone(),
            p_xi: nodes,
        }
    }

    pub fn validate_against(&self, g: &RoadGraph) -> Result<(), DemandError> {
        for (what, pmf) in [
            ("pickup", &self.p_rho),
            ("drop-off", &self.p_delta),
            ("initial-location", &self.p_xi),
        ] {
            check_support(what, pmf, g)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("demand model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DemandError> {
        serde_json::from_str(text).map_err(|e| DemandError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DemandError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DemandError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn check_support(what: &'static str, pmf: &Pmf<NodeId>, g: &RoadGraph) -> Result<(), DemandError> {
    match pmf.support().iter().find(|id| !g.contains(**id)) {
        Some(&node) => Err(DemandError::SupportOutsideGraph { what, node }),
        None => Ok(()),
    }
}

/// Estimates the demand pmfs from a trace by relative frequency.
///
/// Arrival counts are tallied for every minute between the first and last
/// minute in the trace, so quiet minutes contribute mass at zero. The initial
/// location pmf defaults to the drop-off pmf unless `xi_override` is given.
pub fn estimate_demand(
    trace: &RequestTrace,
    g: &RoadGraph,
    xi_override: Option<Pmf<NodeId>>,
) -> Result<DemandModel, DemandError> {
    if trace.is_empty() {
        return Err(DemandError::EmptyTrace);
    }
    let mut pickups: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut dropoffs: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut per_minute: BTreeMap<u64, u32> = BTreeMap::new();
    for (k, r) in trace.records.iter().enumerate() {
        for node in [r.pickup, r.dropoff] {
            if !g.contains(node) {
                return Err(DemandError::TraceUnknownNode {
                    line: trace.line_of(k),
                    node,
                });
            }
        }
        *pickups.entry(r.pickup).or_default() += 1;
        *dropoffs.entry(r.dropoff).or_default() += 1;
        *per_minute.entry(r.minute).or_default() += 1;
    }
    let first = *per_minute.keys().next().expect("non-empty");
    let last = *per_minute.keys().next_back().expect("non-empty");
    let mut arrivals: BTreeMap<u32, u64> = BTreeMap::new();
    for minute in first..=last {
        *arrivals
            .entry(per_minute.get(&minute).copied().unwrap_or(0))
            .or_default() += 1;
    }
    let p_delta = Pmf::from_counts(dropoffs)?;
    let p_xi = match xi_override {
        Some(p) => {
            check_support("initial-location", &p, g)?;
            p
        }
        None => p_delta.clone(),
    };
    Ok(DemandModel {
        p_eta: Pmf::from_counts(arrivals)?,
        p_rho: Pmf::from_counts(pickups)?,
        p_delta,
        p_xi,
    })
}

/// `E[d(X, Y)]` for independent `X ~ from`, `Y ~ to` under hop distance.
pub fn expected_distance(
    g: &RoadGraph,
    from: &Pmf<NodeId>,
    to: &Pmf<NodeId>,
) -> Result<f64, DemandError> {
    let bind = |what, pmf: &Pmf<NodeId>| -> Result<Vec<(NodeIdx, f64)>, DemandError> {
        pmf.iter()
            .map(|(&id, p)| {
                g.index_of(id)
                    .map(|i| (i, p))
                    .map_err(|_| DemandError::SupportOutsideGraph { what, node: id })
            })
            .collect()
    };
    let from = bind("source", from)?;
    let to = bind("target", to)?;
    Ok(from
        .iter()
        .map(|&(u, pu)| {
            pu * to
                .iter()
                .map(|&(v, pv)| pv * g.dist(u, v) as f64)
                .sum::<f64>()
        })
        .sum())
}

/// Draws per-step arrivals from a [`DemandModel`] bound to a graph.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    eta: InverseCdf<u32>,
    rho: InverseCdf<NodeIdx>,
    delta: InverseCdf<NodeIdx>,
    next_id: u64,
}

impl ArrivalSampler {
    pub fn new(m: &DemandModel, g: &RoadGraph) -> Result<Self, DemandError> {
        m.validate_against(g)?;
        Ok(Self {
            eta: m.p_eta.sampler(),
            rho: bind_sampler(&m.p_rho, g),
            delta: bind_sampler(&m.p_delta, g),
            next_id: 0,
        })
    }

    /// Count of requests issued so far; also the id of the next one.
    pub fn issued(&self) -> u64 {
        self.next_id
    }

    /// Draws `k ~ p_eta`, then `k` independent `(pickup, dropoff)` pairs.
    pub fn sample<R: Rng + ?Sized>(&mut self, t: u64, rng: &mut R) -> Vec<Request> {
        let k = self.eta.sample(rng);
        (0..k)
            .map(|_| {
                let pickup = self.rho.sample(rng);
                let dropoff = self.delta.sample(rng);
                let r = Request::new(self.next_id, pickup, dropoff, t);
                self.next_id += 1;
                r
            })
            .collect()
    }
}

/// One-shot arrival draw with ids starting at `first_id`.
pub fn sample_arrivals<R: Rng + ?Sized>(
    m: &DemandModel,
    g: &RoadGraph,
    t: u64,
    first_id: u64,
    rng: &mut R,
) -> Result<Vec<Request>, DemandError> {
    let mut s = ArrivalSampler::new(m, g)?;
    s.next_id = first_id;
    Ok(s.sample(t, rng))
}

pub(crate) fn bind_sampler(pmf: &Pmf<NodeId>, g: &RoadGraph) -> InverseCdf<NodeIdx> {
    InverseCdf::new(
        pmf.iter()
            .map(|(&id, p)| (g.index_of(id).expect("support validated against graph"), p)),
    )
}

impl From<GraphError> for DemandError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownNode(node) => {
                DemandError::SupportOutsideGraph { what: "node", node }
            }
            other => DemandError::Parse(other.to_string()),
        }
    }
}
