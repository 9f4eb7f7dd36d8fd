//! Per-node objective functions.
//!
//! Two families are supported: L2-regularized logistic regression on
//! synthetic data (the benchmark problem, with per-node regularizer weight
//! `lambda / N`) and strongly convex quadratics (analysis-friendly test
//! problems). Both expose exact value, gradient, Hessian and curvature
//! bound queries; the zeroth-order machinery only ever calls `value`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{rng_for, seed_tag, StableHasher};
use rand_distr::{Distribution, StandardNormal};

/// Overflow-safe `log(1 + exp(z))`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Overflow-safe logistic sigmoid.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Strong-convexity / smoothness moduli of one node objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityBounds {
    /// Strong convexity modulus `m_i`.
    pub strong_convexity: f64,
    /// Gradient Lipschitz modulus `M_i`.
    pub smoothness: f64,
}

#[derive(Debug, Clone)]
pub struct LogisticObjective {
    /// Sample matrix, one row per sample.
    data: DMatrix<f64>,
    /// Labels in {-1, +1}.
    labels: DVector<f64>,
    /// Regularizer weight (`lambda / N` in the benchmark problem).
    reg: f64,
}

#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    matrix: DMatrix<f64>,
    center: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum NodeObjective {
    Logistic(LogisticObjective),
    Quadratic(QuadraticObjective),
}

impl LogisticObjective {
    pub fn new(data: DMatrix<f64>, labels: DVector<f64>, reg: f64) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(Error::Parameter(format!(
                "{} samples but {} labels",
                data.nrows(),
                labels.len()
            )));
        }
        if !(reg > 0.0) {
            return Err(Error::Parameter(format!("regularizer weight {reg} must be positive")));
        }
        if labels.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Parameter("labels must be in {-1, +1}".into()));
        }
        Ok(Self { data, labels, reg })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }
}

impl QuadraticObjective {
    /// Requires a symmetric positive definite matrix.
    pub fn new(matrix: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        let d = center.len();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Parameter("quadratic matrix shape mismatch".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * matrix.amax().max(1.0) {
            return Err(Error::Parameter("quadratic matrix must be symmetric".into()));
        }
        let min_eig = matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(Error::Parameter(format!(
                "quadratic matrix must be positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { matrix, center })
    }

    /// Isotropic quadratic `curvature/2 * |x - center|^2`.
    pub fn isotropic(curvature: f64, center: DVector<f64>) -> Result<Self> {
        let d = center.len();
        Self::new(DMatrix::identity(d, d) * curvature, center)
    }
}

impl NodeObjective {
    pub fn dimension(&self) -> usize {
        match self {
            NodeObjective::Logistic(o) => o.data.ncols(),
            NodeObjective::Quadratic(o) => o.center.len(),
        }
    }

    /// Objective value. Panics on dimension mismatch.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dimension(), "dimension mismatch");
        match self {
            NodeObjective::Logistic(o) => {
                let margins = &o.data * x;
                let mut acc = 0.5 * o.reg * x.norm_squared();
                for l in 0..margins.len() {
                    acc += softplus(-o.labels[l] * margins[l]);
                }
                acc
            }
            NodeObjective::Quadratic(o) => {
                let r = x - &o.center;
                0.5 * r.dot(&(&o.matrix * &r))
            }
        }
    }

    /// Exact gradient. Panics on dimension mismatch.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dimension(), "dimension mismatch");
        match self {
            NodeObjective::Logistic(o) => {
                let margins = &o.data * x;
                let mut coeff = DVector::zeros(margins.len());
                for l in 0..margins.len() {
                    let v = o.labels[l];
                    coeff[l] = -v * sigmoid(-v * margins[l]);
                }
                o.data.tr_mul(&coeff) + x * o.reg
            }
            NodeObjective::Quadratic(o) => &o.matrix * (x - &o.center),
        }
    }

    /// Exact Hessian. Panics on dimension mismatch.
    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(x.len(), self.dimension(), "dimension mismatch");
        match self {
            NodeObjective::Logistic(o) => {
                let d = o.data.ncols();
                let margins = &o.data * x;
                let mut h = DMatrix::identity(d, d) * o.reg;
                for l in 0..margins.len() {
                    let s = sigmoid(o.labels[l] * margins[l]);
                    let w = s * (1.0 - s);
                    let row = o.data.row(l).transpose();
                    h.ger(w, &row, &row, 1.0);
                }
                h
            }
            NodeObjective::Quadratic(o) => o.matrix.clone(),
        }
    }

    /// Curvature moduli: for logistic, `m = reg` and
    /// `M = reg + lambda_max(U^T U) / 4`; for quadratics the extreme
    /// eigenvalues of the matrix.
    pub fn convexity_bounds(&self) -> ConvexityBounds {
        match self {
            NodeObjective::Logistic(o) => {
                let gram = o.data.tr_mul(&o.data);
                let lmax = gram
                    .symmetric_eigenvalues()
                    .iter()
                    .cloned()
                    .fold(0.0f64, f64::max);
                ConvexityBounds {
                    strong_convexity: o.reg,
                    smoothness: o.reg + 0.25 * lmax,
                }
            }
            NodeObjective::Quadratic(o) => {
                let eigs = o.matrix.clone().symmetric_eigenvalues();
                ConvexityBounds {
                    strong_convexity: eigs.iter().cloned().fold(f64::INFINITY, f64::min),
                    smoothness: eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                }
            }
        }
    }

    fn write_digest(&self, h: &mut StableHasher) {
        match self {
            NodeObjective::Logistic(o) => {
                h.write_u64(1);
                h.write_matrix(&o.data);
                h.write_vector(&o.labels);
                h.write_f64(o.reg);
            }
            NodeObjective::Quadratic(o) => {
                h.write_u64(2);
                h.write_matrix(&o.matrix);
                h.write_vector(&o.center);
            }
        }
    }
}

/// The consensus problem: `N >= 2` node objectives sharing one dimension.
#[derive(Debug, Clone)]
pub struct Problem {
    nodes: Vec<NodeObjective>,
    dimension: usize,
}

impl Problem {
    pub fn new(nodes: Vec<NodeObjective>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Parameter("problem needs at least two nodes".into()));
        }
        let dimension = nodes[0].dimension();
        if nodes.iter().any(|n| n.dimension() != dimension) {
            return Err(Error::Parameter("node dimensions differ".into()));
        }
        Ok(Self { nodes, dimension })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node(&self, i: usize) -> &NodeObjective {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeObjective] {
        &self.nodes
    }

    pub fn total_value(&self, x: &DVector<f64>) -> f64 {
        self.nodes.iter().map(|n| n.value(x)).sum()
    }

    pub fn total_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dimension);
        for n in &self.nodes {
            g += n.gradient(x);
        }
        g
    }

    pub fn total_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dimension, self.dimension);
        for n in &self.nodes {
            h += n.hessian(x);
        }
        h
    }

    pub fn convexity_bounds(&self) -> Vec<ConvexityBounds> {
        self.nodes.iter().map(|n| n.convexity_bounds()).collect()
    }

    pub fn digest(&self) -> u64 {
        let mut h = StableHasher::new();
        h.write_u64(self.nodes.len() as u64);
        for n in &self.nodes {
            n.write_digest(&mut h);
        }
        h.finish()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                NodeObjective::Logistic(o) => NodeObjectiveDoc::Logistic {
                    dimension: o.data.ncols(),
                    data: o.data.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect(),
                    labels: o.labels.iter().cloned().collect(),
                    reg: o.reg,
                },
                NodeObjective::Quadratic(o) => NodeObjectiveDoc::Quadratic {
                    dimension: o.center.len(),
                    matrix: o.matrix.row_iter().flat_map(|r| r.iter().cloned().collect::<Vec<_>>()).collect(),
                    center: o.center.iter().cloned().collect(),
                },
            })
            .collect();
        Ok(serde_json::to_string_pretty(&ProblemDoc { nodes })?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ProblemDoc =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("problem document: {e}")))?;
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| match n {
                NodeObjectiveDoc::Logistic { dimension, data, labels, reg } => {
                    let rows = labels.len();
                    if data.len() != rows * dimension {
                        return Err(Error::Config("logistic data length mismatch".into()));
                    }
                    Ok(NodeObjective::Logistic(LogisticObjective::new(
                        DMatrix::from_row_slice(rows, dimension, &data),
                        DVector::from_vec(labels),
                        reg,
                    )?))
                }
                NodeObjectiveDoc::Quadratic { dimension, matrix, center } => {
                    if matrix.len() != dimension * dimension || center.len() != dimension {
                        return Err(Error::Config("quadratic payload length mismatch".into()));
                    }
                    Ok(NodeObjective::Quadratic(QuadraticObjective::new(
                        DMatrix::from_row_slice(dimension, dimension, &matrix),
                        DVector::from_vec(center),
                    )?))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Problem::new(nodes)
    }
}

/// On-disk node payloads, matrices row-major.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NodeObjectiveDoc {
    Logistic {
        dimension: usize,
        data: Vec<f64>,
        labels: Vec<f64>,
        reg: f64,
    },
    Quadratic {
        dimension: usize,
        matrix: Vec<f64>,
        center: Vec<f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct ProblemDoc {
    nodes: Vec<NodeObjectiveDoc>,
}

/// Fraction of synthetic labels flipped away from the generating hyperplane.
pub const LABEL_FLIP_RATE: f64 = 0.1;

/// Synthetic regularized logistic problem: features are i.i.d. standard
/// Gaussian, labels come from a random ground-truth hyperplane with 10%
/// flips, and each node carries regularizer weight `lambda / n_nodes`.
/// Deterministic in the seed.
pub fn make_logistic_problem(
    n_nodes: usize,
    dimension: usize,
    samples_per_node: usize,
    lambda: f64,
    seed: u64,
) -> Result<Problem> {
    if n_nodes < 2 || dimension == 0 || samples_per_node == 0 {
        return Err(Error::Parameter(
            "logistic problem needs n_nodes >= 2, dimension >= 1, samples >= 1".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda {lambda} must be positive")));
    }
    let mut rng = rng_for(seed, seed_tag::PROBLEM);
    let mut noise_rng = rng_for(seed, seed_tag::LABEL_NOISE);

    let hyperplane = DVector::from_fn(dimension, |_, _| StandardNormal.sample(&mut rng));
    let reg = lambda / n_nodes as f64;

    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let data = DMatrix::from_fn(samples_per_node, dimension, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        let mut labels = DVector::zeros(samples_per_node);
        for l in 0..samples_per_node {
            let margin = data.row(l).transpose().dot(&hyperplane);
            let mut v = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rand::Rng::random::<f64>(&mut noise_rng) < LABEL_FLIP_RATE {
                v = -v;
            }
            labels[l] = v;
        }
        nodes.push(NodeObjective::Logistic(LogisticObjective::new(
            data, labels, reg,
        )?));
    }
    Problem::new(nodes)
}

/// Centralized Newton solve of `min_x sum_i f_i(x)` down to
/// `|grad| <= tol`, with step halving on non-decrease. The returned point
/// serves as the reference optimum for error measurement, so `tol` should
/// sit far below the experiment criterion (1e-12 by default in the
/// harness).
pub fn solve_reference(problem: &Problem, tol: f64) -> Result<DVector<f64>> {
    const MAX_NEWTON: usize = 200;
    let mut x = DVector::zeros(problem.dimension());
    let mut value = problem.total_value(&x);
    for _ in 0..MAX_NEWTON {
        let grad = problem.total_gradient(&x);
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(x);
        }
        let hess = problem.total_hessian(&x);
        let chol = hess.cholesky().ok_or_else(|| Error::Conditioning {
            lambda_min: f64::NAN,
            context: " in reference Newton solve".into(),
        })?;
        let step = chol.solve(&(-&grad));
        let mut t = 1.0;
        loop {
            let candidate = &x + &step * t;
            let cand_value = problem.total_value(&candidate);
            if cand_value <= value || t < 1e-12 {
                x = candidate;
                value = cand_value;
                break;
            }
            t *= 0.5;
        }
    }
    let grad_norm = problem.total_gradient(&x).norm();
    if grad_norm <= tol {
        Ok(x)
    } else {
        Err(Error::SolverStalled {
            iterations: MAX_NEWTON,
            grad_norm,
        })
    }
}
