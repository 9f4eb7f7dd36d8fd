//! Random connected networks and their consensus penalty matrix.
//!
//! The penalty matrix `P` is the weighted graph Laplacian: `[P]_ii` is the
//! sum of incident edge weights, `[P]_ij = -p_ij` for neighbors and zero
//! otherwise. Its null space is `span{1}` exactly when the graph is
//! connected, and the block-expanded matrix `W = P (x) I_d` shares the
//! spectrum of `P`, so all spectral work happens at the `N x N` level.

use std::collections::BinaryHeap;
use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{rng_for, seed_tag, StableHasher};

/// One undirected weighted edge, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Connected undirected graph with strictly positive edge weights.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

/// Edge weight assignment for generated graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    /// All weights equal to one.
    Unit,
    /// `p_ij = 1 / (1 + max(deg_i, deg_j))`, useful for conditioning studies.
    Metropolis,
}

impl WeightedGraph {
    /// Builds a graph from an edge list, validating every invariant:
    /// no self-loops, no duplicate pairs, positive weights, indices in
    /// range, connectivity.
    pub fn new(n: usize, edge_list: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("graph must have at least one node".into()));
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut seen = HashSet::new();
        for (a, b, w) in edge_list {
            if a == b {
                return Err(Error::Parameter(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Parameter(format!(
                    "edge ({a},{b}) out of range for {n} nodes"
                )));
            }
            if !(w > 0.0) {
                return Err(Error::Parameter(format!(
                    "edge ({a},{b}) has non-positive weight {w}"
                )));
            }
            let (i, j) = (a.min(b), a.max(b));
            if !seen.insert((i, j)) {
                return Err(Error::Parameter(format!("duplicate edge ({i},{j})")));
            }
            edges.push(Edge { i, j, weight: w });
        }
        edges.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));

        let mut neighbors = vec![Vec::new(); n];
        for e in &edges {
            neighbors[e.i].push((e.j, e.weight));
            neighbors[e.j].push((e.i, e.weight));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }

        let g = Self { n, edges, neighbors };
        if !g.is_connected() {
            return Err(Error::Parameter("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `i` with edge weights, sorted by neighbor id.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        a < self.n && self.neighbors[a].binary_search_by_key(&b, |&(j, _)| j).is_ok()
    }

    fn is_connected(&self) -> bool {
        let mut visited = vec![false; self.n];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.neighbors[u] {
                if !visited[v] {
                    visited[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Applies the penalty stencil blockwise: `y_i = sum_j p_ij (x_i - x_j)`.
    ///
    /// This equals `(P (x) I_d) x` computed without forming the Kronecker
    /// product, and is exactly the update rule nodes run after an exchange.
    pub fn laplacian_stencil(&self, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        assert_eq!(xs.len(), self.n, "state count must match node count");
        (0..self.n)
            .map(|i| {
                let mut y = DVector::zeros(xs[i].len());
                for &(j, w) in &self.neighbors[i] {
                    y += (&xs[i] - &xs[j]) * w;
                }
                y
            })
            .collect()
    }

    /// Stable content digest over (n, sorted edges, weights).
    pub fn digest(&self) -> u64 {
        let mut h = StableHasher::new();
        h.write_u64(self.n as u64);
        for e in &self.edges {
            h.write_u64(e.i as u64);
            h.write_u64(e.j as u64);
            h.write_f64(e.weight);
        }
        h.finish()
    }

    pub fn to_json_string(&self) -> Result<String> {
        let doc = GraphDoc {
            n: self.n,
            edges: self.edges.iter().map(|e| (e.i, e.j, e.weight)).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: GraphDoc =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("graph document: {e}")))?;
        Self::new(doc.n, doc.edges)
    }
}

/// On-disk form: `{n, edges: [[i, j, p_ij], ...]}`.
#[derive(Serialize, Deserialize)]
struct GraphDoc {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Uniform labeled random tree on `n` nodes via a random Prufer sequence.
fn random_tree(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<(usize, usize)> {
    use std::cmp::Reverse;
    if n == 2 {
        return vec![(0, 1)];
    }
    let prufer: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &p in &prufer {
        degree[p] += 1;
    }
    let mut leaves: BinaryHeap<Reverse<usize>> = (0..n)
        .filter(|&i| degree[i] == 1)
        .map(Reverse)
        .collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &p in &prufer {
        let Reverse(leaf) = leaves.pop().expect("leaf available during decode");
        edges.push((leaf.min(p), leaf.max(p)));
        degree[leaf] -= 1;
        degree[p] -= 1;
        if degree[p] == 1 {
            leaves.push(Reverse(p));
        }
    }
    let Reverse(u) = leaves.pop().expect("two leaves remain");
    let Reverse(v) = leaves.pop().expect("two leaves remain");
    edges.push((u.min(v), u.max(v)));
    edges
}

/// Generates a connected graph with exactly `floor(n * avg_degree / 2)`
/// edges: a uniform random spanning tree plus uniformly chosen extra edges.
/// Connectivity holds by construction, no rejection loop. Weights follow
/// `policy` (unit by default, see [`random_connected_graph`]).
pub fn random_connected_graph_with_policy(
    n: usize,
    avg_degree: f64,
    seed: u64,
    policy: WeightPolicy,
) -> Result<WeightedGraph> {
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 nodes, got {n}")));
    }
    if !avg_degree.is_finite() || avg_degree <= 0.0 {
        return Err(Error::Parameter(format!("average degree {avg_degree} invalid")));
    }
    let target_edges = (n as f64 * avg_degree / 2.0).floor() as usize;
    let max_edges = n * (n - 1) / 2;
    if target_edges < n - 1 || target_edges > max_edges {
        return Err(Error::Parameter(format!(
            "average degree {avg_degree} infeasible on {n} nodes: \
             {target_edges} edges requested, feasible range is [{}, {max_edges}]",
            n - 1
        )));
    }

    let mut rng = rng_for(seed, seed_tag::GRAPH);
    let tree = random_tree(n, &mut rng);
    let tree_set: HashSet<(usize, usize)> = tree.iter().copied().collect();

    let mut chosen: Vec<(usize, usize)> = tree;
    let extra = target_edges - (n - 1);
    if extra > 0 {
        let mut pool: Vec<(usize, usize)> = Vec::with_capacity(max_edges - (n - 1));
        for i in 0..n {
            for j in (i + 1)..n {
                if !tree_set.contains(&(i, j)) {
                    pool.push((i, j));
                }
            }
        }
        // partial Fisher-Yates: the first `extra` slots become the sample
        for k in 0..extra {
            let pick = rng.random_range(k..pool.len());
            pool.swap(k, pick);
        }
        chosen.extend_from_slice(&pool[..extra]);
    }

    let weighted: Vec<(usize, usize, f64)> = match policy {
        WeightPolicy::Unit => chosen.into_iter().map(|(i, j)| (i, j, 1.0)).collect(),
        WeightPolicy::Metropolis => {
            let mut deg = vec![0usize; n];
            for &(i, j) in &chosen {
                deg[i] += 1;
                deg[j] += 1;
            }
            chosen
                .into_iter()
                .map(|(i, j)| (i, j, 1.0 / (1.0 + deg[i].max(deg[j]) as f64)))
                .collect()
        }
    };
    WeightedGraph::new(n, weighted)
}

/// [`random_connected_graph_with_policy`] with unit weights.
pub fn random_connected_graph(n: usize, avg_degree: f64, seed: u64) -> Result<WeightedGraph> {
    random_connected_graph_with_policy(n, avg_degree, seed, WeightPolicy::Unit)
}

/// Dense symmetric consensus penalty matrix built from a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    m: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    /// Kronecker expansion `P (x) I_d` as a dense matrix. Intended for
    /// small-instance oracles and the dense analysis path; solvers use the
    /// blockwise stencil instead.
    pub fn kronecker_with_identity(&self, d: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n * d, n * d);
        for r in 0..n {
            for c in 0..n {
                let v = self.m[(r, c)];
                if v != 0.0 {
                    for k in 0..d {
                        out[(r * d + k, c * d + k)] = v;
                    }
                }
            }
        }
        out
    }
}

/// Assembles the penalty matrix of a graph. Row sums vanish by
/// construction, so `P 1 = 0` holds to rounding.
pub fn weight_matrix(g: &WeightedGraph) -> PenaltyMatrix {
    let n = g.n_nodes();
    let mut m = DMatrix::zeros(n, n);
    for e in g.edges() {
        m[(e.i, e.j)] = -e.weight;
        m[(e.j, e.i)] = -e.weight;
        m[(e.i, e.i)] += e.weight;
        m[(e.j, e.j)] += e.weight;
    }
    PenaltyMatrix { m }
}

/// Extremal nonzero spectrum of the penalty matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Smallest eigenvalue above the null-space threshold. As an eigenvalue
    /// of `P` it equals the smallest nonzero eigenvalue of `W = P (x) I_d`.
    pub lambda_w: f64,
    /// Largest eigenvalue.
    pub lambda_max: f64,
}

/// Eigenvalues at or below `1e-9 * lambda_max` are treated as the null
/// space; this keeps the cutoff scale-aware.
pub const NULL_SPACE_RELATIVE_THRESHOLD: f64 = 1e-9;

pub fn spectral_summary(p: &PenaltyMatrix) -> Result<SpectralSummary> {
    let eigs = p.as_matrix().clone().symmetric_eigenvalues();
    let lambda_max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_max > 0.0) {
        return Err(Error::Spectral(format!(
            "penalty matrix has no positive eigenvalue (max = {lambda_max:.3e})"
        )));
    }
    let threshold = NULL_SPACE_RELATIVE_THRESHOLD * lambda_max;
    let lambda_w = eigs
        .iter()
        .cloned()
        .filter(|&l| l > threshold)
        .fold(f64::INFINITY, f64::min);
    if !lambda_w.is_finite() {
        return Err(Error::Spectral(
            "all eigenvalues below the null-space threshold".into(),
        ));
    }
    Ok(SpectralSummary { lambda_w, lambda_max })
}
