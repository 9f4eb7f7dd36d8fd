//! Decentralized consensus optimization over synthetic networks.
//!
//! A set of nodes jointly minimizes the sum of their private objectives
//! while only exchanging primal values with graph neighbors. The crate
//! provides:
//!
//! - [`graph`]: random connected networks and the consensus penalty matrix;
//! - [`objectives`]: regularized logistic and quadratic node objectives
//!   with exact derivative and curvature-bound queries;
//! - [`estimators`]: the Gaussian-smoothing zeroth-order oracle, its
//!   closed-form error bounds and the curvature sandwich probe;
//! - [`solvers`]: the zeroth-order proximal solver (ZoPro) with Armijo
//!   backtracking and its exact-derivative ancestor (SoPro);
//! - [`simnet`]: the synchronous exchange engine with locality auditing;
//! - [`analysis`]: numerical evaluation of the linear-convergence
//!   constants, the contraction envelope and slope diagnostics;
//! - [`harness`]: experiment sweeps, convergence measurement, CSV/JSON
//!   persistence and deterministic replay.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod harness;
pub mod objectives;
pub mod simnet;
pub mod solvers;
pub mod util;

pub use error::{Error, Result};
pub use estimators::{DirectionMode, SmoothingConfig};
pub use graph::{PenaltyMatrix, SpectralSummary, WeightedGraph};
pub use objectives::{ConvexityBounds, NodeObjective, Problem};
pub use solvers::{AlgoConfig, DPolicy, NodeState, RunRecord, SlopeMode, StopRule};
