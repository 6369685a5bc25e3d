//! Inter-ciphertext aggregation.
//!
//! For every neighbor index `k` there is a ciphertext set in which node `v`'s
//! slot already holds the features of `neighbors[v][k]`. Aggregation is then a
//! weighted multiply-add across those sets. At the first layer the client
//! encrypts all orders itself, so producing them costs nothing here.
//!
//! The self term enters without a multiply: neighbor weights are divided by
//! the self weight and the per-node self weight is left as a pending scale
//! that the following combination folds into its plaintext weights.

use crate::error::{Error, Result};
use crate::graph_io::SampledAdjacency;
use crate::matrix::Matrix;
use crate::packing::{pack, SlotLayout};
use crate::slotvm::{CipherVec, SlotVm};
use crate::spintra::Token;

/// Aggregated ciphertexts in the input layout, plus the per-node factor that
/// still has to be multiplied in (`w_self[v]`).
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub cts: Vec<CipherVec>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterCaPlan {
    n: usize,
    /// `sources[k][v]` = node whose features node `v` receives in order `k`.
    sources: Vec<Vec<usize>>,
    /// `weights[k][v]` = `w[v][k] / w_self[v]`.
    weights: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl InterCaPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sources(&self, k: usize) -> &[usize] {
        &self.sources[k]
    }

    pub fn relative_weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }
}

pub fn build_interca(adj: &SampledAdjacency, layout: &SlotLayout) -> Result<InterCaPlan> {
    let num_nodes = adj.num_nodes();
    if layout.num_nodes() != num_nodes {
        return Err(Error::Dimension(format!(
            "layout holds {} nodes, adjacency {}",
            layout.num_nodes(),
            num_nodes
        )));
    }
    let scale: Vec<f64> = (0..num_nodes).map(|v| adj.self_weight(v)).collect();
    if let Some(v) = scale.iter().position(|&w| w == 0.0) {
        return Err(Error::Unsupported(format!(
            "node {v} has zero self weight; the self term cannot be factored out"
        )));
    }
    let n = adj.n();
    let sources = (0..n)
        .map(|k| (0..num_nodes).map(|v| adj.neighbors(v)[k]).collect())
        .collect();
    let weights = (0..n)
        .map(|k| {
            (0..num_nodes)
                .map(|v| adj.weights(v)[k] / scale[v])
                .collect()
        })
        .collect();
    Ok(InterCaPlan {
        n,
        sources,
        weights,
        scale,
    })
}

/// Plan whose neighbor order `k` is whatever a rotation schedule delivered
/// into output `k`. Slots without a token get weight 0.
pub fn plan_from_tokens(tokens: &[Token], outputs: usize, scale: &[f64]) -> InterCaPlan {
    let num_nodes = scale.len();
    let mut sources: Vec<Vec<usize>> = vec![(0..num_nodes).collect(); outputs];
    let mut weights = vec![vec![0.0; num_nodes]; outputs];
    for t in tokens {
        sources[t.output][t.target] = t.source;
        weights[t.output][t.target] = t.weight / scale[t.target];
    }
    InterCaPlan {
        n: outputs,
        sources,
        weights,
        scale: scale.to_vec(),
    }
}

/// Client-side re-packing of the plaintext input in all `n` neighbor orders.
/// Encryption happens before the server sees anything, so no HOC is recorded.
pub fn pack_neighbor_layouts(
    plan: &InterCaPlan,
    x: &Matrix,
    layout: &SlotLayout,
    level: u32,
) -> Result<Vec<Vec<CipherVec>>> {
    (0..plan.n)
        .map(|k| {
            let mut permuted = Matrix::zeros(x.rows(), x.cols());
            for (v, &u) in plan.sources[k].iter().enumerate() {
                for f in 0..x.cols() {
                    permuted[(v, f)] = x[(u, f)];
                }
            }
            pack(&permuted, layout, level)
        })
        .collect()
}

/// Plaintext vector with `values[v]` at every slot of node `v` inside the
/// given ciphertext's row block (all column blocks).
pub fn node_mask(layout: &SlotLayout, ct: usize, values: &[f64]) -> Vec<f64> {
    let ring = layout.ring();
    let row_block = ct / layout.column_groups();
    let mut m = vec![0.0; layout.slots()];
    for (v, &w) in values.iter().enumerate() {
        let pos = layout.node_position(v);
        if pos / ring != row_block {
            continue;
        }
        for b in 0..layout.t() {
            m[b * ring + pos % ring] = w;
        }
    }
    m
}

/// Weighted multiply-add over the neighbor orders. Records exactly
/// `n · (#ciphertexts)` PMult and Add and no rotation.
pub fn exec_interca(
    vm: &mut SlotVm,
    plan: &InterCaPlan,
    neighbor_cts: &[Vec<CipherVec>],
    self_cts: &[CipherVec],
    layout: &SlotLayout,
) -> Result<Aggregated> {
    if neighbor_cts.len() != plan.n
        || neighbor_cts.iter().any(|set| set.len() != self_cts.len())
        || self_cts.len() != layout.num_ciphertexts()
    {
        return Err(Error::Dimension(
            "neighbor ciphertext sets do not match the plan".into(),
        ));
    }
    let mut out = Vec::with_capacity(self_cts.len());
    for (c, self_ct) in self_cts.iter().enumerate() {
        let mut acc = self_ct.clone();
        for (k, set) in neighbor_cts.iter().enumerate() {
            let mask = node_mask(layout, c, &plan.weights[k]);
            let term = vm.pmult(&set[c], &mask)?;
            acc = vm.add(&acc, &term);
        }
        out.push(acc);
    }
    Ok(Aggregated {
        cts: out,
        scale: plan.scale.clone(),
    })
}

/// Closed-form (PMult, Add) of [`exec_interca`] for `F` features.
pub fn interca_counts(f: usize, n: usize, t: usize, row_blocks: usize) -> (u64, u64) {
    let c = (n * f.div_ceil(t) * row_blocks) as u64;
    (c, c)
}
