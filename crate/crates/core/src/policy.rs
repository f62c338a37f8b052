//! Dispatch policies: random assignment and instantaneous (min-cost) assignment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{Request, RequestId};
use crate::fleet::{AgentId, FleetState};
use crate::graph::RoadGraph;
use crate::matching::{build_costs, solve_assignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    RandomAssignment,
    InstantaneousAssignment,
}

impl PolicyKind {
    pub fn short_name(self) -> &'static str {
        match self {
            PolicyKind::RandomAssignment => "RA",
            PolicyKind::InstantaneousAssignment => "IA",
        }
    }
}

/// New assignments made in one step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DispatchDecision {
    pub pairs: Vec<(AgentId, RequestId)>,
}

impl DispatchDecision {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Dispatcher-visible cost: `Σ d(agent, pickup) + d(pickup, dropoff)`.
    pub fn cost(&self, fs: &FleetState, outstanding: &[Request], g: &RoadGraph) -> u64 {
        self.pairs
            .iter()
            .map(|&(a, r)| {
                let agent = &fs.agents[a.0 as usize];
                let req = outstanding
                    .iter()
                    .find(|q| q.id == r)
                    .expect("decision refers to an outstanding request");
                (g.dist(agent.location, req.pickup) + g.dist(req.pickup, req.dropoff)) as u64
            })
            .sum()
    }
}

/// Serves requests in id order, each with an agent drawn uniformly from the
/// remaining available pool.
pub fn dispatch_random<R: Rng + ?Sized>(
    fs: &FleetState,
    outstanding: &[Request],
    rng: &mut R,
) -> DispatchDecision {
    let mut pool: Vec<AgentId> = fs.available().map(|a| a.id).collect();
    let mut order: Vec<RequestId> = outstanding.iter().map(|r| r.id).collect();
    order.sort_unstable();
    let mut pairs = Vec::with_capacity(pool.len().min(order.len()));
    for r in order {
        if pool.is_empty() {
            break;
        }
        let k = rng.gen_range(0..pool.len());
        pairs.push((pool.remove(k), r));
    }
    DispatchDecision { pairs }
}

/// Min-cost matching of available agents to outstanding requests.
pub fn dispatch_instantaneous(
    fs: &FleetState,
    outstanding: &[Request],
    g: &RoadGraph,
) -> DispatchDecision {
    let problem = build_costs(fs, outstanding, g);
    let Some(costs) = &problem.costs else {
        return DispatchDecision::default();
    };
    let m = solve_assignment(costs).expect("non-empty matrix of distances");
    DispatchDecision {
        pairs: m
            .pairs
            .into_iter()
            .map(|(i, j)| (problem.agents[i], problem.requests[j]))
            .collect(),
    }
}

pub fn dispatch<R: Rng + ?Sized>(
    kind: PolicyKind,
    fs: &FleetState,
    outstanding: &[Request],
    g: &RoadGraph,
    rng: &mut R,
) -> DispatchDecision {
    match kind {
        PolicyKind::RandomAssignment => dispatch_random(fs, outstanding, rng),
        PolicyKind::InstantaneousAssignment => dispatch_instantaneous(fs, outstanding, g),
    }
}
