//! Exact first Wasserstein distance between node pmfs by successive shortest
//! paths on the transportation network.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::Pmf;
use crate::graph::{NodeId, NodeIdx, RoadGraph};

/// Mass below this is treated as exhausted.
const MASS_EPS: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("{which} pmf references node {node} which is not in the graph")]
    UnknownNode { which: &'static str, node: NodeId },
    #[error("{which} pmf sums to {total}, expected 1")]
    NotNormalized { which: &'static str, total: f64 },
    #[error("transport solver did not converge after {0} augmentations")]
    NoConvergence(usize),
}

/// Ground metric between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    /// Directed shortest-path hop count.
    #[default]
    GraphHops,
    /// Straight-line distance between node coordinates.
    Euclidean,
}

impl GroundMetric {
    pub fn distance(self, g: &RoadGraph, from: NodeIdx, to: NodeIdx) -> f64 {
        match self {
            GroundMetric::GraphHops => g.dist(from, to) as f64,
            GroundMetric::Euclidean => g.euclidean(from, to),
        }
    }
}

/// Optimal coupling, stored as its non-zero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `(from, to, mass)`: `from` carries the first marginal, `to` the second.
    pub flows: Vec<(NodeId, NodeId, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn row_mass(&self, from: NodeId) -> f64 {
        self.flows.iter().filter(|f| f.0 == from).map(|f| f.2).sum()
    }

    pub fn col_mass(&self, to: NodeId) -> f64 {
        self.flows.iter().filter(|f| f.1 == to).map(|f| f.2).sum()
    }
}

/// Minimum-cost coupling of `p` (sources) and `q` (sinks) under `metric`.
pub fn wasserstein(
    p: &Pmf<NodeId>,
    q: &Pmf<NodeId>,
    g: &RoadGraph,
    metric: GroundMetric,
) -> Result<TransportPlan, TransportError> {
    let bind = |which, pmf: &Pmf<NodeId>| -> Result<Vec<(NodeIdx, f64)>, TransportError> {
        let total = pmf.total();
        if (total - 1.0).abs() > crate::demand::PMF_TOLERANCE {
            return Err(TransportError::NotNormalized { which, total });
        }
        pmf.iter()
            .map(|(&id, m)| {
                g.index_of(id)
                    .map(|i| (i, m / total))
                    .map_err(|_| TransportError::UnknownNode { which, node: id })
            })
            .collect()
    };
    let sources = bind("source", p)?;
    let sinks = bind("target", q)?;
    let cost: Vec<Vec<f64>> = sources
        .iter()
        .map(|&(u, _)| {
            sinks
                .iter()
                .map(|&(v, _)| metric.distance(g, u, v))
                .collect()
        })
        .collect();
    let supply: Vec<f64> = sources.iter().map(|s| s.1).collect();
    let demand: Vec<f64> = sinks.iter().map(|s| s.1).collect();
    let flow = min_cost_transport(&cost, &supply, &demand)?;

    let mut flows = Vec::new();
    let mut total = 0.0;
    for (i, row) in flow.iter().enumerate() {
        for (j, &f) in row.iter().enumerate() {
            if f > 0.0 {
                flows.push((g.id_of(sources[i].0), g.id_of(sinks[j].0), f));
                total += f * cost[i][j];
            }
        }
    }
    Ok(TransportPlan { flows, cost: total })
}

/// Dense transportation problem solved by successive shortest augmenting
/// paths with Dijkstra on reduced costs. Returns the flow matrix.
pub fn min_cost_transport(
    cost: &[Vec<f64>],
    supply: &[f64],
    demand: &[f64],
) -> Result<Vec<Vec<f64>>, TransportError> {
    let a = supply.len();
    let b = demand.len();
    let nodes = a + b;
    let mut flow = vec![vec![0.0; b]; a];
    let mut left_supply = supply.to_vec();
    let mut left_demand = demand.to_vec();
    // Potentials start at zero: all forward costs are non-negative.
    let mut potential = vec![0.0; nodes];
    let max_iter = 4 * nodes * nodes + 16;

    for _ in 0..max_iter {
        if left_supply.iter().all(|&s| s <= MASS_EPS) || left_demand.iter().all(|&d| d <= MASS_EPS)
        {
            return Ok(flow);
        }
        // Multi-source Dijkstra over sources (0..a) and sinks (a..a+b).
        let mut dist = vec![f64::INFINITY; nodes];
        let mut parent = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        for i in 0..a {
            if left_supply[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < a {
                // forward arcs source -> sink, unbounded capacity
                for (j, &c) in cost[u].iter().enumerate() {
                    let v = a + j;
                    let rc = c + potential[u] - potential[v];
                    let nd = dist[u] + rc.max(0.0);
                    if nd < dist[v] {
                        dist[v] = nd;
                        parent[v] = u;
                    }
                }
            } else {
                // backward arcs sink -> source where flow is positive
                let j = u - a;
                for i in 0..a {
                    if flow[i][j] > MASS_EPS {
                        let rc = -cost[i][j] + potential[u] - potential[i];
                        let nd = dist[u] + rc.max(0.0);
                        if nd < dist[i] {
                            dist[i] = nd;
                            parent[i] = u;
                        }
                    }
                }
            }
        }
        let Some(target) = (0..b)
            .filter(|&j| left_demand[j] > MASS_EPS && dist[a + j].is_finite())
            .min_by(|&x, &y| dist[a + x].total_cmp(&dist[a + y]))
        else {
            return Ok(flow);
        };
        for v in 0..nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }

        // Walk back to the origin source and find the bottleneck.
        let mut bottleneck = left_demand[target];
        let mut v = a + target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u >= a {
                bottleneck = bottleneck.min(flow[v][u - a]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(left_supply[v]);
        let origin = v;

        let mut v = a + target;
        while parent[v] != usize::MAX {
            let u = parent[v];
            if u < a {
                flow[u][v - a] += bottleneck;
            } else {
                flow[v][u - a] -= bottleneck;
                if flow[v][u - a] < MASS_EPS {
                    flow[v][u - a] = 0.0;
                }
            }
            v = u;
        }
        left_supply[origin] -= bottleneck;
        left_demand[target] -= bottleneck;
    }
    Err(TransportError::NoConvergence(max_iter))
}
