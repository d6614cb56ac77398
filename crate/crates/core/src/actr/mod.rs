//! ACT-R base-level activation, the logistic retention curve, and the
//! human-similarity distance of fitted parameters.
//!
//! ```text
//! w(t)    = ln sum_i [kappa * (t - t_i)]^(-d)
//! R_hat   = 1 / (1 + exp(-(w(t) - gamma) / s))
//! HRS-MD  = sum_j ((theta_j - mu_j) / sigma_j)^2      theta = (d, s, gamma)
//! score   = exp(-HRS-MD / 2)
//! ```

mod fit;
mod nelder_mead;

pub use fit::{fit, synthetic_dp_curves, CurveData, FitOptions, FitRecord, FitResult, Gauge};
pub use nelder_mead::{nelder_mead, Bounds, NelderMeadOptions, NelderMeadResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::PracticeSchedule;

/// Parameter box used by the fitter.
pub const D_BOUNDS: (f64, f64) = (0.01, 1.0);
pub const S_BOUNDS: (f64, f64) = (0.01, 2.0);
pub const KAPPA_BOUNDS: (f64, f64) = (0.01, 10.0);
pub const GAMMA_BOUNDS: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActrParams {
    /// Decay rate.
    pub d: f64,
    /// Activation noise.
    pub s: f64,
    /// Time scaling.
    pub kappa: f64,
    /// Retrieval threshold.
    pub gamma: f64,
}

impl ActrParams {
    pub fn new(d: f64, s: f64, kappa: f64, gamma: f64) -> Self {
        ActrParams { d, s, kappa, gamma }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.d, self.s, self.kappa, self.gamma]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        ActrParams::new(v[0], v[1], v[2], v[3])
    }

    /// The `(d, s, gamma)` vector compared against human references.
    pub fn theta(&self) -> [f64; 3] {
        [self.d, self.s, self.gamma]
    }

    pub fn bounds() -> [(f64, f64); 4] {
        [D_BOUNDS, S_BOUNDS, KAPPA_BOUNDS, GAMMA_BOUNDS]
    }

    pub fn in_bounds(&self) -> bool {
        self.to_array()
            .iter()
            .zip(Self::bounds())
            .all(|(v, (lo, hi))| (lo..=hi).contains(v))
    }
}

/// Memory activation at evaluation time `t`.
pub fn activation(params: &ActrParams, practice: &PracticeSchedule, t: f64) -> Result<f64> {
    let last = practice
        .last()
        .ok_or_else(|| Error::invalid("practice schedule is empty"))?;
    if !(t > last as f64) {
        return Err(Error::invalid(format!(
            "evaluation time {t} is not after the last practice {last}"
        )));
    }
    if !(params.kappa > 0.0) {
        return Err(Error::invalid("kappa must be positive"));
    }
    let logs: Vec<f64> = practice.times.iter().map(|&ti| (t - ti as f64).ln()).collect();
    Ok(activation_from_log_lags(params.d, params.kappa, &logs))
}

/// `w` from precomputed `ln(t - t_i)`, via log-sum-exp.
pub(crate) fn activation_from_log_lags(d: f64, kappa: f64, log_lags: &[f64]) -> f64 {
    // [kappa * lag]^(-d) = exp(-d ln kappa) * exp(-d ln lag); the most recent
    // practice has the smallest lag and dominates the sum
    let max = log_lags
        .iter()
        .map(|l| -d * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_lags.iter().map(|l| (-d * l - max).exp()).sum();
    max + sum.ln() - d * kappa.ln()
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn retention_from_activation(params: &ActrParams, w: f64) -> f64 {
    logistic((w - params.gamma) / params.s)
}

/// Predicted retention probability at `t`.
pub fn retention_hat(params: &ActrParams, practice: &PracticeSchedule, t: f64) -> Result<f64> {
    let w = activation(params, practice, t)?;
    Ok(retention_from_activation(params, w))
}

/// Human reference distribution of `(d, s, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanReference {
    pub version: u32,
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
}

const HUMAN_REFERENCE_V1: &str = include_str!("../../data/human_reference_v1.json");

impl HumanReference {
    /// The bundled reference table.
    pub fn bundled() -> Self {
        Self::from_json(HUMAN_REFERENCE_V1).expect("bundled reference parses")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: HumanReference = serde_json::from_str(s)?;
        if r.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("reference standard deviations must be positive"));
        }
        Ok(r)
    }

    /// Diagonal of the covariance matrix.
    pub fn covariance_diagonal(&self) -> [f64; 3] {
        self.sigma.map(|s| s * s)
    }
}

impl Default for HumanReference {
    fn default() -> Self {
        Self::bundled()
    }
}

/// Squared diagonal Mahalanobis distance of `theta = (d, s, gamma)` from the
/// reference mean.
pub fn hrs_md(theta: [f64; 3], reference: &HumanReference) -> f64 {
    theta
        .iter()
        .zip(reference.mu.iter().zip(&reference.sigma))
        .map(|(x, (m, s))| ((x - m) / s).powi(2))
        .sum()
}

/// Gaussian-RBF similarity `exp(-D^2 / 2)`.
pub fn hrs_score(d_squared: f64) -> Result<f64> {
    if !(d_squared >= 0.0) {
        return Err(Error::invalid("squared distance must be non-negative"));
    }
    Ok((-0.5 * d_squared).exp())
}
