//! Agent dynamics: cooperative agents walk shortest paths, adversarial agents
//! follow the bounded-delay model.
//!
//! An assigned agent works through two legs, agent location to pickup and
//! pickup to drop-off. Each leg begins with a stationary dwell of `e` steps
//! (zero for cooperative agents) followed by the shortest path, one hop per
//! step. Leg times are therefore exactly `d + e`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{InverseCdf, Request, RequestId};
use crate::graph::{Itinerary, NodeIdx, RoadGraph};

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("fleet size must be at least 1")]
    EmptyFleet,
    #[error("adversarial proportion {0} is outside [0, 1]")]
    ProportionOutOfRange(f64),
    #[error("adversarial proportion {f} of a fleet of {n} gives {count} agents, which is not an integer")]
    NonIntegralAdversaries { n: usize, f: f64, count: f64 },
    #[error("agent {0} does not exist")]
    UnknownAgent(AgentId),
    #[error("agent {0} is busy")]
    AgentBusy(AgentId),
    #[error("request {0} is already assigned")]
    RequestAlreadyAssigned(RequestId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentClass {
    Cooperative,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    /// Every leg is delayed by exactly the maximum.
    #[default]
    FixedMaximum,
    /// Every leg is delayed by a uniform draw from `0..=max`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayPolicy {
    pub mode: DelayMode,
    pub max_delay: u32,
}

impl DelayPolicy {
    pub fn fixed(max_delay: u32) -> Self {
        Self {
            mode: DelayMode::FixedMaximum,
            max_delay,
        }
    }

    pub fn uniform(max_delay: u32) -> Self {
        Self {
            mode: DelayMode::Uniform,
            max_delay,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self.mode {
            DelayMode::FixedMaximum => self.max_delay,
            DelayMode::Uniform => rng.gen_range(0..=self.max_delay),
        }
    }
}

/// How a proportion is turned into a whole number of adversaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryRounding {
    /// `f * n` must already be an integer.
    #[default]
    Exact,
    /// Round `f * n` to the nearest integer, halves away from zero.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetComposition {
    pub size: usize,
    pub adversaries: usize,
}

impl FleetComposition {
    pub fn from_proportion(
        n: usize,
        f: f64,
        rounding: AdversaryRounding,
    ) -> Result<Self, FleetError> {
        if n == 0 {
            return Err(FleetError::EmptyFleet);
        }
        if !(0.0..=1.0).contains(&f) {
            return Err(FleetError::ProportionOutOfRange(f));
        }
        let count = f * n as f64;
        let nearest = count.round();
        if rounding == AdversaryRounding::Exact && (count - nearest).abs() > 1e-9 {
            return Err(FleetError::NonIntegralAdversaries { n, f, count });
        }
        Ok(Self {
            size: n,
            adversaries: nearest as usize,
        })
    }

    pub fn cooperative(&self) -> usize {
        self.size - self.adversaries
    }

    pub fn proportion(&self) -> f64 {
        self.adversaries as f64 / self.size as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ToPickup,
    ToDropoff,
}

/// An agent's commitment to one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub request: RequestId,
    pub pickup: NodeIdx,
    pub dropoff: NodeIdx,
    pub assigned_at: u64,
    /// Dispatcher-visible service time `d(v, pickup) + d(pickup, dropoff)`.
    pub expected: u32,
    pub e_pick: u32,
    pub e_drop: u32,
    /// Whether this is the agent's first request of the horizon.
    pub first: bool,
    pub phase: Phase,
    pub pending_delay: u32,
    pub itinerary: Itinerary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    pub id: AgentId,
    pub location: NodeIdx,
    /// Dispatcher's expected remaining trip time; 0 iff the agent is free.
    pub remaining: u32,
    pub class: AgentClass,
    pub trip: Option<Trip>,
    pub served: u32,
}

impl AgentState {
    pub fn new(id: AgentId, location: NodeIdx, class: AgentClass) -> Self {
        Self {
            id,
            location,
            remaining: 0,
            class,
            trip: None,
            served: 0,
        }
    }

    #[inline]
    pub fn is_available(&self) -> bool {
        self.trip.is_none()
    }

    pub fn assignment(&self) -> Option<RequestId> {
        self.trip.as_ref().map(|t| t.request)
    }

    pub fn pending_delay(&self) -> u32 {
        self.trip.as_ref().map_or(0, |t| t.pending_delay)
    }

    /// Commits the agent to `r` with the given per-leg dwell delays.
    pub fn assign(
        &mut self,
        r: &Request,
        g: &RoadGraph,
        e_pick: u32,
        e_drop: u32,
        t: u64,
    ) -> Result<(), FleetError> {
        if !self.is_available() {
            return Err(FleetError::AgentBusy(self.id));
        }
        if r.picked_up {
            return Err(FleetError::RequestAlreadyAssigned(r.id));
        }
        let expected = g.dist(self.location, r.pickup) + g.dist(r.pickup, r.dropoff);
        self.remaining = expected.max(1);
        self.trip = Some(Trip {
            request: r.id,
            pickup: r.pickup,
            dropoff: r.dropoff,
            assigned_at: t,
            expected,
            e_pick,
            e_drop,
            first: self.served == 0,
            phase: Phase::ToPickup,
            pending_delay: e_pick,
            itinerary: g.shortest_path(self.location, r.pickup),
        });
        Ok(())
    }

    /// Advances one time step starting at time `t`.
    fn tick(&mut self, g: &RoadGraph, t: u64, out: &mut StepOutcome) {
        if self.trip.is_none() {
            return;
        }
        self.settle(g, t, out);
        let Some(trip) = self.trip.as_mut() else {
            return;
        };
        if trip.pending_delay > 0 {
            trip.pending_delay -= 1;
        } else {
            self.location = trip
                .itinerary
                .advance()
                .expect("unfinished leg has a next hop");
        }
        self.remaining = self.remaining.saturating_sub(1).max(1);
        self.settle(g, t + 1, out);
    }

    /// Fires every leg that has nothing left to do at time `t`.
    fn settle(&mut self, g: &RoadGraph, t: u64, out: &mut StepOutcome) {
        while let Some(trip) = self.trip.as_mut() {
            if trip.pending_delay > 0 || trip.itinerary.remaining() > 0 {
                return;
            }
            match trip.phase {
                Phase::ToPickup => {
                    out.pickups.push(Pickup {
                        agent: self.id,
                        request: trip.request,
                        time: t,
                    });
                    trip.phase = Phase::ToDropoff;
                    trip.pending_delay = trip.e_drop;
                    trip.itinerary = g.shortest_path(trip.pickup, trip.dropoff);
                }
                Phase::ToDropoff => {
                    out.completions.push(Completion {
                        agent: self.id,
                        class: self.class,
                        request: trip.request,
                        assigned_at: trip.assigned_at,
                        completed_at: t,
                        expected: trip.expected,
                        e_pick: trip.e_pick,
                        e_drop: trip.e_drop,
                    });
                    self.trip = None;
                    self.remaining = 0;
                    self.served += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pickup {
    pub agent: AgentId,
    pub request: RequestId,
    pub time: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub agent: AgentId,
    pub class: AgentClass,
    pub request: RequestId,
    pub assigned_at: u64,
    pub completed_at: u64,
    pub expected: u32,
    pub e_pick: u32,
    pub e_drop: u32,
}

impl Completion {
    pub fn service_time(&self) -> u64 {
        self.completed_at - self.assigned_at
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub pickups: Vec<Pickup>,
    pub completions: Vec<Completion>,
}

impl StepOutcome {
    pub fn completed_ids(&self) -> Vec<RequestId> {
        self.completions.iter().map(|c| c.request).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Assign,
    Pickup,
    Dropoff,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Assign => "assign",
            EventKind::Pickup => "pickup",
            EventKind::Dropoff => "dropoff",
        }
    }
}

/// One row of the `t,event,agent,request` event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FleetEvent {
    pub t: u64,
    pub kind: EventKind,
    pub agent: AgentId,
    pub request: RequestId,
}

impl fmt::Display for FleetEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.t,
            self.kind.as_str(),
            self.agent,
            self.request
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FleetState {
    pub agents: Vec<AgentState>,
    pub t: u64,
    /// Cooperative agents dwell like adversaries (symmetric worst case).
    pub symmetric: bool,
}

impl FleetState {
    pub fn new(agents: Vec<AgentState>) -> Self {
        Self {
            agents,
            t: 0,
            symmetric: false,
        }
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn adversary_count(&self) -> usize {
        self.agents
            .iter()
            .filter(|a| a.class == AgentClass::Adversarial)
            .count()
    }

    pub fn proportion(&self) -> f64 {
        self.adversary_count() as f64 / self.len() as f64
    }

    pub fn available(&self) -> impl Iterator<Item = &AgentState> + '_ {
        self.agents.iter().filter(|a| a.is_available())
    }

    pub fn agent(&self, id: AgentId) -> Result<&AgentState, FleetError> {
        self.agents
            .get(id.0 as usize)
            .ok_or(FleetError::UnknownAgent(id))
    }

    fn dwells(&self, class: AgentClass) -> bool {
        class == AgentClass::Adversarial || self.symmetric
    }

    /// Assigns `r` to `agent`, drawing dwell delays from `dp` when the agent dwells.
    pub fn assign<R: Rng + ?Sized>(
        &mut self,
        agent: AgentId,
        r: &Request,
        g: &RoadGraph,
        dp: &DelayPolicy,
        rng: &mut R,
    ) -> Result<FleetEvent, FleetError> {
        let idx = agent.0 as usize;
        let class = self.agent(agent)?.class;
        if !self.agents[idx].is_available() {
            return Err(FleetError::AgentBusy(agent));
        }
        if self.agents.iter().any(|a| a.assignment() == Some(r.id)) {
            return Err(FleetError::RequestAlreadyAssigned(r.id));
        }
        let (e_pick, e_drop) = if self.dwells(class) {
            (dp.draw(rng), dp.draw(rng))
        } else {
            (0, 0)
        };
        let t = self.t;
        self.agents[idx].assign(r, g, e_pick, e_drop, t)?;
        Ok(FleetEvent {
            t,
            kind: EventKind::Assign,
            agent,
            request: r.id,
        })
    }

    /// Moves every busy agent by one tick and advances the clock.
    pub fn step(&mut self, g: &RoadGraph) -> StepOutcome {
        let mut out = StepOutcome::default();
        let t = self.t;
        for a in &mut self.agents {
            a.tick(g, t, &mut out);
        }
        self.t += 1;
        out
    }
}

/// Places agents i.i.d. from `xi` and draws adversary ids uniformly without replacement.
pub fn init_fleet<R: Rng + ?Sized>(
    composition: FleetComposition,
    xi: &InverseCdf<NodeIdx>,
    rng: &mut R,
) -> FleetState {
    let mut adversarial = vec![false; composition.size];
    for i in rand::seq::index::sample(rng, composition.size, composition.adversaries) {
        adversarial[i] = true;
    }
    let agents = adversarial
        .into_iter()
        .enumerate()
        .map(|(i, adv)| {
            let class = if adv {
                AgentClass::Adversarial
            } else {
                AgentClass::Cooperative
            };
            AgentState::new(AgentId(i as u32), xi.sample(rng), class)
        })
        .collect();
    FleetState::new(agents)
}
