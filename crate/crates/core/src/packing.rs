//! Column-wise packing of feature matrices into slot vectors.
//!
//! `t` feature columns share one ciphertext. Each column occupies a block of
//! `ring = S / t` consecutive slots, and node `v` sits at offset `π(v)` inside
//! every block. When the nodes do not fit one block, the layout spills into
//! additional row blocks.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::slotvm::CipherVec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotLayout {
    slots: usize,
    t: usize,
    num_features: usize,
    /// node id -> position; positions below `ring` live in row block 0.
    positions: Vec<usize>,
    row_blocks: usize,
}

impl SlotLayout {
    pub fn new(slots: usize, t: usize, num_features: usize, positions: Vec<usize>) -> Result<Self> {
        if !slots.is_power_of_two() {
            return Err(Error::Config(format!(
                "slot count {slots} is not a power of two"
            )));
        }
        if !t.is_power_of_two() || t > slots {
            return Err(Error::Config(format!(
                "packing width {t} must be a power of two not above {slots}"
            )));
        }
        let ring = slots / t;
        let mut seen = vec![false; positions.iter().max().map_or(0, |m| m + 1)];
        for &p in &positions {
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::Dimension(format!("two nodes share position {p}")));
            }
        }
        let row_blocks = seen.len().div_ceil(ring).max(1);
        Ok(Self {
            slots,
            t,
            num_features,
            positions,
            row_blocks,
        })
    }

    /// Nodes in id order.
    pub fn identity(slots: usize, t: usize, num_nodes: usize, num_features: usize) -> Result<Self> {
        Self::new(slots, t, num_features, (0..num_nodes).collect())
    }

    /// Same slot geometry and node order for a different feature count.
    pub fn with_features(&self, num_features: usize) -> Self {
        Self {
            num_features,
            ..self.clone()
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Length of the per-column sub-ring, `S / t`.
    pub fn ring(&self) -> usize {
        self.slots / self.t
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn row_blocks(&self) -> usize {
        self.row_blocks
    }

    pub fn column_groups(&self) -> usize {
        self.num_features.div_ceil(self.t)
    }

    pub fn num_ciphertexts(&self) -> usize {
        self.column_groups() * self.row_blocks
    }

    pub fn node_position(&self, v: usize) -> usize {
        self.positions[v]
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Whether every node lives in the first row block (a single sub-ring).
    pub fn fits_ring(&self) -> bool {
        self.row_blocks == 1
    }

    /// `(ciphertext, slot)` of matrix entry `(v, f)`.
    pub fn position(&self, v: usize, f: usize) -> (usize, usize) {
        let ring = self.ring();
        let pos = self.positions[v];
        let ct = (pos / ring) * self.column_groups() + f / self.t;
        (ct, (f % self.t) * ring + pos % ring)
    }

    /// Occupied slots over `ciphertexts × S`.
    pub fn utilization(&self) -> f64 {
        let used = (self.num_nodes() * self.num_features) as f64;
        used / (self.num_ciphertexts() * self.slots) as f64
    }
}

/// `2⌈F·n/t⌉ + rot_weight·⌈log2 t⌉`: PMult+Add of a first-layer Inter-CA pass
/// plus the rotations of the intra-ciphertext column sum.
pub fn objective_j(t: usize, f: usize, n: usize, rot_weight: f64) -> f64 {
    assert!(t >= 1);
    let mults = (f * n).div_ceil(t);
    2.0 * mults as f64 + rot_weight * ceil_log2(t) as f64
}

pub fn ceil_log2(x: usize) -> u32 {
    assert!(x >= 1);
    usize::BITS - (x - 1).leading_zeros()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackingCase {
    /// `S > N·F'`: a full output column fits one ciphertext.
    ColumnFits,
    /// `S <= N·F'`: the PMult/Add count no longer depends on `t`.
    ColumnExceeds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackingPlan {
    pub t: usize,
    pub case: PackingCase,
    pub objective: f64,
}

/// Powers of two `t <= F` whose column block still holds every node.
pub fn feasible_widths(slots: usize, num_nodes: usize, f: usize) -> Vec<usize> {
    let mut out = vec![1];
    let mut t = 2;
    while t <= f.max(1) && t <= slots && num_nodes * t <= slots {
        out.push(t);
        t <<= 1;
    }
    out
}

/// Analytic choice of the packing width.
pub fn plan_packing(
    slots: usize,
    num_nodes: usize,
    f: usize,
    f_out: usize,
    n: usize,
    rot_weight: f64,
) -> Result<PackingPlan> {
    if !slots.is_power_of_two() {
        return Err(Error::Config(format!(
            "slot count {slots} is not a power of two"
        )));
    }
    if slots <= num_nodes * f_out {
        return Ok(PackingPlan {
            t: 1,
            case: PackingCase::ColumnExceeds,
            objective: objective_j(1, f, n, rot_weight),
        });
    }
    let mut best = (1, objective_j(1, f, n, rot_weight));
    for t in feasible_widths(slots, num_nodes, f) {
        let j = objective_j(t, f, n, rot_weight);
        if j < best.1 {
            best = (t, j);
        }
    }
    Ok(PackingPlan {
        t: best.0,
        case: PackingCase::ColumnFits,
        objective: best.1,
    })
}

pub fn pack(x: &Matrix, layout: &SlotLayout, level: u32) -> Result<Vec<CipherVec>> {
    if x.rows() != layout.num_nodes() || x.cols() != layout.num_features() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{} but layout covers {}x{}",
            x.rows(),
            x.cols(),
            layout.num_nodes(),
            layout.num_features()
        )));
    }
    let s = layout.slots();
    let count = layout.num_ciphertexts();
    let mut slots = vec![vec![0.0; s]; count];
    let mut occ = vec![vec![false; s]; count];
    for v in 0..x.rows() {
        for f in 0..x.cols() {
            let (ct, slot) = layout.position(v, f);
            slots[ct][slot] = x[(v, f)];
            occ[ct][slot] = true;
        }
    }
    Ok(slots
        .into_iter()
        .zip(occ)
        .map(|(s, o)| CipherVec::with_occupancy(s, level, o))
        .collect())
}

pub fn unpack(cts: &[CipherVec], layout: &SlotLayout) -> Result<Matrix> {
    if cts.len() != layout.num_ciphertexts() {
        return Err(Error::Dimension(format!(
            "{} ciphertexts for a layout of {}",
            cts.len(),
            layout.num_ciphertexts()
        )));
    }
    let mut out = Matrix::zeros(layout.num_nodes(), layout.num_features());
    for v in 0..layout.num_nodes() {
        for f in 0..layout.num_features() {
            let (ct, slot) = layout.position(v, f);
            out[(v, f)] = cts[ct].slots()[slot];
        }
    }
    Ok(out)
}
