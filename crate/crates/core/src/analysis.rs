//! Closed-form stability quantities: expected service times, the cooperative
//! fleet bound, the instability threshold on the adversarial proportion, the
//! adversary-robust fleet bound and the coupon-collector time.
//!
//! All bounds are real numbers. Fleet sizes are their ceilings, computed with
//! a `1e-9` slack so that a bound which is an integer up to floating-point
//! noise is not pushed to the next integer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{expected_distance, DemandError, DemandModel};
use crate::graph::RoadGraph;
use crate::transport::{wasserstein, GroundMetric, TransportError};

const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("threshold is undefined for delay {delta} and expected arrivals {e_eta}")]
    UndefinedThreshold { delta: f64, e_eta: f64 },
    #[error("maximum adversarial proportion {0} is outside [0, 1]")]
    ProportionOutOfRange(f64),
    #[error("delay must be non-negative and finite, got {0}")]
    BadDelay(f64),
    #[error("coupon collector needs at least one cooperative agent")]
    NoCooperativeAgents,
    #[error("input {name} = {value} must be finite and non-negative")]
    BadInput { name: &'static str, value: f64 },
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Expectations the bounds are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityInputs {
    /// `E[η]`, mean arrivals per step.
    pub e_eta: f64,
    /// `E[d(ξ, ρ)]`, initial location to pickup.
    pub e_xi_rho: f64,
    /// `E[d(v_rand, ρ)]`, previous drop-off to pickup.
    pub e_vrand_rho: f64,
    /// `E[d(ρ, δ)]`, pickup to drop-off.
    pub e_rho_delta: f64,
    /// `WD(p_δ, p_ρ)`.
    pub wd: f64,
}

impl StabilityInputs {
    pub fn from_model(
        m: &DemandModel,
        g: &RoadGraph,
        metric: GroundMetric,
    ) -> Result<Self, AnalysisError> {
        Ok(Self {
            e_eta: m.expected_eta(),
            e_xi_rho: expected_distance(g, &m.p_xi, &m.p_rho)?,
            e_vrand_rho: expected_distance(g, m.p_vrand(), &m.p_rho)?,
            e_rho_delta: expected_distance(g, &m.p_rho, &m.p_delta)?,
            wd: wasserstein(&m.p_delta, &m.p_rho, g, metric)?.cost,
        })
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        for (name, value) in [
            ("e_eta", self.e_eta),
            ("e_xi_rho", self.e_xi_rho),
            ("e_vrand_rho", self.e_vrand_rho),
            ("e_rho_delta", self.e_rho_delta),
            ("wd", self.wd),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(AnalysisError::BadInput { name, value });
            }
        }
        Ok(())
    }

    /// Maximum expected service time per request.
    pub fn d_max(&self) -> f64 {
        self.e_xi_rho.max(self.e_vrand_rho) + self.e_rho_delta
    }

    /// Minimum expected service time per request.
    pub fn d_min(&self) -> f64 {
        self.wd + self.e_rho_delta
    }

    /// Real-valued cooperative bound `E[η] · D_max`.
    pub fn coop_bound(&self) -> f64 {
        self.e_eta * self.d_max()
    }

    /// Real-valued robust bound `E[η] · D_max + 2Δ · E[η] · F_max`.
    pub fn robust_bound(&self, delta: f64, f_max: f64) -> f64 {
        self.coop_bound() + 2.0 * delta * self.e_eta * f_max
    }

    /// Proportion above which random assignment with `n_prime` agents is
    /// unstable: `(N' − E[η] · D_min) / (2Δ · E[η])`.
    pub fn instability_threshold(&self, n_prime: f64, delta: f64) -> Result<f64, AnalysisError> {
        let defined = delta.is_finite() && delta > 0.0 && self.e_eta > 0.0;
        if !defined {
            return Err(AnalysisError::UndefinedThreshold {
                delta,
                e_eta: self.e_eta,
            });
        }
        Ok((n_prime - self.e_eta * self.d_min()) / (2.0 * delta * self.e_eta))
    }
}

pub fn fleet_size(bound: f64) -> usize {
    (bound - CEIL_SLACK).ceil().max(0.0) as usize
}

/// Smallest integer fleet satisfying the cooperative bound.
pub fn n_coop(inputs: &StabilityInputs) -> usize {
    fleet_size(inputs.coop_bound())
}

/// Smallest integer fleet satisfying the robust bound.
pub fn n_robust(inputs: &StabilityInputs, delta: f64, f_max: f64) -> usize {
    fleet_size(inputs.robust_bound(delta, f_max))
}

pub fn instability_threshold(
    n_prime: usize,
    m: &DemandModel,
    g: &RoadGraph,
    delta: f64,
    metric: GroundMetric,
) -> Result<f64, AnalysisError> {
    StabilityInputs::from_model(m, g, metric)?.instability_threshold(n_prime as f64, delta)
}

/// Expected draws until all `n` cooperative agents have been picked: `n · H_n`.
pub fn coupon_collector_time(n: usize) -> Result<f64, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::NoCooperativeAgents);
    }
    Ok((1..=n).map(|k| n as f64 / k as f64).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub e_eta: f64,
    pub e_xi_rho: f64,
    pub e_vrand_rho: f64,
    pub e_rho_delta: f64,
    pub wd: f64,
    pub d_max: f64,
    pub d_min: f64,
    pub coop_bound: f64,
    pub n_coop: usize,
    /// Fleet size the threshold is evaluated for (defaults to `n_coop`).
    pub n_prime: usize,
    /// `None` when the threshold is undefined (zero delay or no arrivals).
    pub f_threshold: Option<f64>,
    pub robust_bound: f64,
    pub n_robust: usize,
    pub delta: f64,
    pub f_max: f64,
    /// Whether `wd ≤ max(E[d(ξ,ρ)], E[d(v_rand,ρ)])`, which implies `d_min ≤ d_max`.
    pub ordering_holds: bool,
}

impl StabilityReport {
    pub fn from_inputs(
        inputs: StabilityInputs,
        delta: f64,
        f_max: f64,
        n_prime: Option<usize>,
    ) -> Result<Self, AnalysisError> {
        inputs.validate()?;
        if !delta.is_finite() || delta < 0.0 {
            return Err(AnalysisError::BadDelay(delta));
        }
        if !(0.0..=1.0).contains(&f_max) {
            return Err(AnalysisError::ProportionOutOfRange(f_max));
        }
        let n_coop = n_coop(&inputs);
        let n_prime = n_prime.unwrap_or(n_coop);
        let f_threshold = match inputs.instability_threshold(n_prime as f64, delta) {
            Ok(f) => Some(f),
            Err(AnalysisError::UndefinedThreshold { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            e_eta: inputs.e_eta,
            e_xi_rho: inputs.e_xi_rho,
            e_vrand_rho: inputs.e_vrand_rho,
            e_rho_delta: inputs.e_rho_delta,
            wd: inputs.wd,
            d_max: inputs.d_max(),
            d_min: inputs.d_min(),
            coop_bound: inputs.coop_bound(),
            n_coop,
            n_prime,
            f_threshold,
            robust_bound: inputs.robust_bound(delta, f_max),
            n_robust: n_robust(&inputs, delta, f_max),
            delta,
            f_max,
            ordering_holds: inputs.wd <= inputs.e_xi_rho.max(inputs.e_vrand_rho),
        })
    }

    pub fn inputs(&self) -> StabilityInputs {
        StabilityInputs {
            e_eta: self.e_eta,
            e_xi_rho: self.e_xi_rho,
            e_vrand_rho: self.e_vrand_rho,
            e_rho_delta: self.e_rho_delta,
            wd: self.wd,
        }
    }

    /// Human-readable two-column table.
    pub fn table(&self) -> String {
        let threshold = self
            .f_threshold
            .map_or_else(|| "undefined".to_string(), |f| format!("{f:.4}"));
        let rows = [
            ("E[eta]", format!("{:.4}", self.e_eta)),
            ("E[d(xi,rho)]", format!("{:.4}", self.e_xi_rho)),
            ("E[d(v_rand,rho)]", format!("{:.4}", self.e_vrand_rho)),
            ("E[d(rho,delta)]", format!("{:.4}", self.e_rho_delta)),
            ("WD(delta,rho)", format!("{:.4}", self.wd)),
            ("D_max", format!("{:.4}", self.d_max)),
            ("D_min", format!("{:.4}", self.d_min)),
            (
                "cooperative fleet",
                format!("{} (bound {:.4})", self.n_coop, self.coop_bound),
            ),
            (
                "unstable above F",
                format!("{threshold} (N' = {})", self.n_prime),
            ),
            (
                "robust fleet",
                format!(
                    "{} (bound {:.4}, delay {}, F_max {})",
                    self.n_robust, self.robust_bound, self.delta, self.f_max
                ),
            ),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

pub fn compute_report(
    m: &DemandModel,
    g: &RoadGraph,
    delta: f64,
    f_max: f64,
    metric: GroundMetric,
) -> Result<StabilityReport, AnalysisError> {
    StabilityReport::from_inputs(
        StabilityInputs::from_model(m, g, metric)?,
        delta,
        f_max,
        None,
    )
}
