//! Run records: per-iteration metric series, optional state snapshots and
//! step details, CSV/JSON persistence.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::ExchangeTrace;
use crate::solvers::AlgoConfig;

pub const CSV_HEADER: &str =
    "iter,avg_error,consensus_residual,objective,min_alpha,max_alpha,oracle_calls";

/// One row of the metric series, recorded after each completed round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Mean squared distance to the reference optimum over nodes.
    pub avg_error: f64,
    /// Norm of the stacked penalty stencil, zero exactly at consensus.
    pub consensus_residual: f64,
    /// Sum of node objective values at the current iterates (diagnostic;
    /// not counted against the value-query budget).
    pub objective: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// Cumulative value queries made by the algorithm itself.
    pub oracle_calls: usize,
}

/// Snapshot of all node states after a round (and one for the initial
/// state), kept only when state recording is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub x: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

/// Per-node line-search outcome of one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub alpha: f64,
    /// Directional-derivative surrogate fed to the sufficient-decrease
    /// test, taken on the local augmented merit.
    pub slope: f64,
    /// Whether the stepsize passed the test (false marks safeguard
    /// fallbacks, which take a floor-sized step without certification).
    pub accepted: bool,
    pub probes: usize,
    /// Merit value at the pre-step iterate (zeroth-order runs only).
    pub f_before: Option<f64>,
    /// Merit value at the accepted trial point, absent on fallbacks.
    pub f_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algorithm: String,
    pub seed: u64,
    pub config: AlgoConfig,
    pub graph_digest: u64,
    pub problem_digest: u64,
    pub n_nodes: usize,
    pub dimension: usize,
    pub x_star: Vec<f64>,
    /// Scale of the proximal blocks actually used.
    pub d_tau: f64,
    /// Smallest stepsize accepted by the line search across the run.
    pub alpha_floor_observed: Option<f64>,
    /// Smallest stepsize the safeguard can assign, `shrink^max_backtracks`.
    pub alpha_floor_a_priori: f64,
    /// Rounds where the local system needed an eigenvalue shift.
    pub conditioning_shifts: usize,
    /// Steps taken through the safeguard instead of the decrease test.
    pub fallback_steps: usize,
    pub value_calls: usize,
    pub derivative_calls: usize,
    pub iterations_run: usize,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub metadata: RunMetadata,
    pub series: Vec<IterationMetrics>,
    /// `series.len() + 1` snapshots (initial state first) when enabled.
    pub states: Option<Vec<StateSnapshot>>,
    /// Per-round, per-node step details when enabled.
    pub steps: Option<Vec<Vec<StepInfo>>>,
    pub trace: Option<ExchangeTrace>,
}

impl RunRecord {
    pub fn avg_errors(&self) -> Vec<f64> {
        self.series.iter().map(|m| m.avg_error).collect()
    }

    pub fn final_avg_error(&self) -> Option<f64> {
        self.series.last().map(|m| m.avg_error)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for m in &self.series {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                m.iter,
                m.avg_error,
                m.consensus_residual,
                m.objective,
                m.min_alpha,
                m.max_alpha,
                m.oracle_calls
            )?;
        }
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("run record: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{DirectionMode, SmoothingConfig};
    use crate::solvers::{DPolicy, SlopeMode};

    fn dummy_record() -> RunRecord {
        RunRecord {
            metadata: RunMetadata {
                algorithm: "zopro".into(),
                seed: 1,
                config: AlgoConfig {
                    rho: 0.5,
                    c_armijo: 0.1,
                    shrink: 0.5,
                    max_backtracks: 30,
                    smoothing: SmoothingConfig {
                        mu: 0.05,
                        batch: 50,
                        direction_mode: DirectionMode::FreshPerIteration,
                        rng_seed: 7,
                    },
                    d_policy: DPolicy::ScaledIdentity { tau: 5.0 },
                    max_iterations: 10,
                    slope_mode: SlopeMode::GradientEstimate,
                    stop: None,
                    record_states: false,
                    record_steps: false,
                    record_trace: false,
                },
                graph_digest: 2,
                problem_digest: 3,
                n_nodes: 2,
                dimension: 1,
                x_star: vec![0.0],
                d_tau: 5.0,
                alpha_floor_observed: Some(0.5),
                alpha_floor_a_priori: 0.5f64.powi(30),
                conditioning_shifts: 0,
                fallback_steps: 0,
                value_calls: 42,
                derivative_calls: 0,
                iterations_run: 2,
            },
            series: vec![
                IterationMetrics {
                    iter: 0,
                    avg_error: 1.5,
                    consensus_residual: 0.25,
                    objective: 3.0,
                    min_alpha: 1.0,
                    max_alpha: 1.0,
                    oracle_calls: 21,
                },
                IterationMetrics {
                    iter: 1,
                    avg_error: 0.5,
                    consensus_residual: 0.125,
                    objective: 2.0,
                    min_alpha: 0.5,
                    max_alpha: 1.0,
                    oracle_calls: 42,
                },
            ],
            states: None,
            steps: None,
            trace: None,
        }
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_iteration() {
        let rec = dummy_record();
        let csv = rec.csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), rec.series.len());
        assert!(csv.contains("0,1.5,0.25,3,1,1,21"));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rec = dummy_record();
        let s = rec.to_json_string().unwrap();
        let back = RunRecord::from_json_str(&s).unwrap();
        assert_eq!(rec, back);
    }
}
