//! Synchronous round-based message passing with locality auditing.
//!
//! The engine is the only path from one node's state to another: solvers
//! read remote values exclusively through [`NeighborView`]s produced by
//! [`exchange`], which also records every delivery so a trace audit can
//! certify that no message crossed a non-edge. Delivery is in-process,
//! loss-free and same-round.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::WeightedGraph;
use crate::util::vector_digest;

/// One delivered message, payload abbreviated to a stable digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub payload_digest: u64,
}

/// Append-only log of deliveries across a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangeTrace {
    pub records: Vec<ExchangeRecord>,
}

impl ExchangeTrace {
    pub fn extend(&mut self, records: Vec<ExchangeRecord>) {
        self.records.extend(records);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// JSON-lines export, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// What node `i` received this epoch: exactly its neighbors' primal values.
#[derive(Debug, Clone)]
pub struct NeighborView {
    node: usize,
    values: BTreeMap<usize, DVector<f64>>,
}

impl NeighborView {
    pub fn node(&self) -> usize {
        self.node
    }

    pub fn get(&self, j: usize) -> Option<&DVector<f64>> {
        self.values.get(&j)
    }

    pub fn neighbor_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.keys().copied()
    }

    /// Penalty stencil from received values: `y_i = sum_j p_ij (x_i - x_j)`.
    pub fn stencil(&self, x_i: &DVector<f64>, graph: &WeightedGraph) -> DVector<f64> {
        let mut y = DVector::zeros(x_i.len());
        for &(j, w) in graph.neighbors(self.node) {
            let x_j = self
                .values
                .get(&j)
                .expect("view covers every neighbor by construction");
            y += (x_i - x_j) * w;
        }
        y
    }
}

/// One synchronous exchange: every node sends its vector to each neighbor.
/// Returns per-node views plus the delivery records of this epoch.
pub fn exchange(
    xs: &[DVector<f64>],
    graph: &WeightedGraph,
    round: usize,
) -> (Vec<NeighborView>, Vec<ExchangeRecord>) {
    assert_eq!(xs.len(), graph.n_nodes(), "state count must match node count");
    let digests: Vec<u64> = xs.iter().map(vector_digest).collect();
    let mut views = Vec::with_capacity(xs.len());
    let mut records = Vec::with_capacity(2 * graph.n_edges());
    for i in 0..xs.len() {
        let mut values = BTreeMap::new();
        for &(j, _) in graph.neighbors(i) {
            values.insert(j, xs[j].clone());
            records.push(ExchangeRecord {
                round,
                sender: j,
                receiver: i,
                payload_digest: digests[j],
            });
        }
        views.push(NeighborView { node: i, values });
    }
    (views, records)
}

/// Records whose (sender, receiver) pair is not an edge of the graph.
pub fn locality_audit<'a>(
    trace: &'a ExchangeTrace,
    graph: &WeightedGraph,
) -> Vec<&'a ExchangeRecord> {
    trace
        .records
        .iter()
        .filter(|r| !graph.is_edge(r.sender, r.receiver))
        .collect()
}
