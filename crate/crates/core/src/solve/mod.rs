//! Extraction pipelines built on contraction: unique inversion, enumeration
//! of isolated roots, renormalized search, τ-annealed optimization, the
//! forward transform and gauge-pair checks.

mod forward;
mod invert;
mod optimize;

use serde::{Deserialize, Serialize};

use crate::engine::FtniloNumber;
use crate::error::{Error, Result};

pub use forward::{forward_eval, gauge_pair_check, GaugeCheck};
pub use invert::{invert_all, invert_unique, renormalized_ratio};
pub use optimize::{optimize, OptimizeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MomentUnique,
    ProtocolBisect,
    Argmax,
}

/// Objective value after one τ step of an optimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub tau: f64,
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub variables: Vec<String>,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    /// `|f(X̂) − Y|` for inversions, `f(X̂)` for optimizations.
    pub residual: f64,
    /// Standard deviation of each normalized marginal at extraction.
    pub sharpness: Vec<f64>,
    /// Every constraint gate passes at `X̂` (exact re-evaluation).
    pub feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ftnilo: Option<FtniloNumber>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryPoint>,
    /// Relative masses of the separate peaks of the first marginal at the
    /// final τ.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub kappa: Vec<f64>,
}

/// Ascending, strictly increasing τ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauSchedule(Vec<f64>);

impl TauSchedule {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Domain("tau schedule is empty".into()));
        }
        if taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Domain("tau values must be positive and finite".into()));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("tau schedule must be strictly increasing".into()));
        }
        Ok(Self(taus))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self(vec![1.0, 4.0, 16.0, 64.0])
    }
}

impl TryFrom<Vec<f64>> for TauSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TauSchedule> for Vec<f64> {
    fn from(s: TauSchedule) -> Self {
        s.0
    }
}

/// One isolated solution found by the bracketing protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bracket {
    pub values: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// `μ₀, μ₁, μ₂` of the last variable inside the bracket.
    pub moments: [f64; 3],
    /// Set when several coincident roots were merged by the collapse test;
    /// holds `|μ₂ − μ₁²/μ₀| / μ₂`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub variables: Vec<String>,
    pub solutions: Vec<Bracket>,
    pub total: FtniloNumber,
    /// Mass of the restricted density not assigned to any bracket.
    pub residual_mass: f64,
}
