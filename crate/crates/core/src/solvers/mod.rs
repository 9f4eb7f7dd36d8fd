//! Per-node proximal solvers driven by the synchronous network engine.
//!
//! Two algorithms share one primal-dual skeleton over the consensus
//! penalty: a zeroth-order variant that estimates curvature and gradients
//! from sampled values and guards each primal step with a backtracking
//! line search, and its exact-derivative ancestor that takes unit steps
//! with the true gradient and Hessian.

mod line_search;
mod proximal;
mod record;
mod run;

pub use line_search::{armijo_stepsize, LineSearchError};
pub use proximal::{choose_d, search_direction, ProximalBlocks, CONDITIONING_FLOOR};
pub use record::{IterationMetrics, RunMetadata, RunRecord, StateSnapshot, StepInfo};
pub use run::{run_sopro, run_zopro, zopro_round, RoundOutput};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SmoothingConfig;

/// Local state of one node.
#[derive(Debug, Clone)]
pub struct NodeState {
    /// Primal iterate.
    pub x: DVector<f64>,
    /// Dual iterate; the stacked duals stay in the zero-sum subspace.
    pub q: DVector<f64>,
    /// Penalty stencil `y_i = sum_j p_ij (x_i - x_j)` of the last exchange.
    pub y: DVector<f64>,
    /// Proximal block `D_i`, symmetric.
    pub d_mat: DMatrix<f64>,
    /// Most recently taken stepsize.
    pub alpha_last: f64,
}

/// Choice of the proximal blocks `D_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DPolicy {
    /// `D_i = tau * I` with the given `tau > 0`.
    ScaledIdentity { tau: f64 },
    /// One global `tau` derived from the curvature bounds: the smallest
    /// value (plus headroom) for which the blockwise positivity margin
    /// condition holds, given a curvature sandwich factor `theta` and a
    /// margin parameter `eta > 1`.
    CurvatureMargin { eta: f64, theta: f64 },
}

/// Directional-derivative surrogate used by the line search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMode {
    /// Inner product of the gradient estimate with the search direction.
    /// Costs no extra value queries.
    GradientEstimate,
    /// One-sided finite difference `(f(x + eps d) - f(x)) / eps`, one extra
    /// value query per node per round. Validation aid.
    ForwardDifference { epsilon: f64 },
}

/// Early-stop rule: halt `window` iterations after the average error first
/// stays at or below `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub tolerance: f64,
    pub window: usize,
}

/// Full solver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    /// Consensus penalty weight.
    pub rho: f64,
    /// Sufficient-decrease fraction of the line search, in (0, 1).
    pub c_armijo: f64,
    /// Backtracking contraction factor, in (0, 1).
    pub shrink: f64,
    /// Number of contractions before the search gives up.
    pub max_backtracks: usize,
    pub smoothing: SmoothingConfig,
    pub d_policy: DPolicy,
    pub max_iterations: usize,
    #[serde(default = "default_slope_mode")]
    pub slope_mode: SlopeMode,
    /// Optional early stop; `None` runs the full iteration budget.
    #[serde(default)]
    pub stop: Option<StopRule>,
    #[serde(default)]
    pub record_states: bool,
    #[serde(default)]
    pub record_steps: bool,
    #[serde(default)]
    pub record_trace: bool,
}

fn default_slope_mode() -> SlopeMode {
    SlopeMode::GradientEstimate
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Parameter(format!("rho {} must be positive", self.rho)));
        }
        if !(self.c_armijo > 0.0 && self.c_armijo < 1.0) {
            return Err(Error::Parameter(format!(
                "stepsize control parameter {} must lie in (0, 1)",
                self.c_armijo
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Parameter(format!(
                "backtracking factor {} must lie in (0, 1)",
                self.shrink
            )));
        }
        if self.max_backtracks == 0 {
            return Err(Error::Parameter("max_backtracks must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Parameter("max_iterations must be at least 1".into()));
        }
        if let SlopeMode::ForwardDifference { epsilon } = self.slope_mode {
            if !(epsilon > 0.0) {
                return Err(Error::Parameter("slope epsilon must be positive".into()));
            }
        }
        if let Some(stop) = &self.stop {
            if !(stop.tolerance > 0.0) {
                return Err(Error::Parameter("stop tolerance must be positive".into()));
            }
        }
        match self.d_policy {
            DPolicy::ScaledIdentity { tau } => {
                if !(tau > 0.0) {
                    return Err(Error::Parameter(format!("tau {tau} must be positive")));
                }
            }
            DPolicy::CurvatureMargin { eta, theta } => {
                if !(eta > 1.0) {
                    return Err(Error::Parameter(format!("eta {eta} must exceed 1")));
                }
                if !(theta > 0.0 && theta <= 1.0) {
                    return Err(Error::Parameter(format!("theta {theta} must lie in (0, 1]")));
                }
            }
        }
        self.smoothing.validate()
    }

    /// Smallest stepsize the safeguarded line search can assign.
    pub fn alpha_floor_a_priori(&self) -> f64 {
        self.shrink.powi(self.max_backtracks as i32)
    }
}
