//! Multi-layer inference over the slot machine, plus its plaintext oracle.

mod combine;
mod run;

pub use combine::{activate_square, combine};
pub use run::{
    dry_run, infer, prepare, sweep_t, DryRun, ExecutionPlan, InferOptions, Inference, LayerReport,
    SweepPoint,
};

use crate::error::{Error, Result};
use crate::graph_io::SampledAdjacency;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Inter,
    SpIntra,
    Auto,
}

impl std::str::FromStr for ModeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inter" => Ok(Self::Inter),
            "spintra" => Ok(Self::SpIntra),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Config(format!(
                "unknown aggregation mode `{other}` (inter|spintra|auto)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggMode {
    Inter,
    SpIntra,
}

impl AggMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Inter => "inter",
            Self::SpIntra => "spintra",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Square,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub f_in: usize,
    pub f_out: usize,
    pub mode: ModeChoice,
    pub activation: Activation,
}

impl LayerSpec {
    /// Multiplicative depth: aggregation weights, combination, activation.
    pub fn depth(&self) -> u32 {
        2 + u32::from(self.activation == Activation::Square)
    }
}

/// Layers for a dimension chain such as `[1433, 32, 16]`, all with the
/// square activation and automatic mode selection.
pub fn chain(dims: &[usize]) -> Result<Vec<LayerSpec>> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!(
            "dimension chain {dims:?} needs at least two positive entries"
        )));
    }
    Ok(dims
        .windows(2)
        .map(|w| LayerSpec {
            f_in: w[0],
            f_out: w[1],
            mode: ModeChoice::Auto,
            activation: Activation::Square,
        })
        .collect())
}

/// `2⌈F·n/t⌉`.
pub fn inter_estimate(f: usize, n: usize, t: usize) -> f64 {
    (2 * (f * n).div_ceil(t)) as f64
}

/// `(rot_weight / 2) · c · n · log2(N)²`.
pub fn spintra_estimate(n: usize, num_nodes: usize, c: f64, rot_weight: f64) -> f64 {
    let l = (num_nodes as f64).log2();
    rot_weight / 2.0 * c * n as f64 * l * l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDecision {
    pub layer: usize,
    pub chosen: AggMode,
    pub inter_cost: f64,
    pub spintra_cost: f64,
    pub c: f64,
    pub forced: bool,
}

/// The first layer always aggregates across ciphertexts; later layers take
/// the cheaper estimate, ties to Inter-CA.
#[allow(clippy::too_many_arguments)]
pub fn select_mode(
    layer: usize,
    f: usize,
    n: usize,
    t: usize,
    num_nodes: usize,
    c: f64,
    rot_weight: f64,
) -> ModeDecision {
    let inter_cost = inter_estimate(f, n, t);
    let spintra_cost = spintra_estimate(n, num_nodes, c, rot_weight);
    let chosen = if layer > 0 && spintra_cost < inter_cost {
        AggMode::SpIntra
    } else {
        AggMode::Inter
    };
    ModeDecision {
        layer,
        chosen,
        inter_cost,
        spintra_cost,
        c,
        forced: false,
    }
}

/// Dense forward pass `σ(Â·H·W)` over the same sampled adjacency.
pub fn oracle_forward(
    adj: &SampledAdjacency,
    x: &Matrix,
    weights: &[Matrix],
    layers: &[LayerSpec],
) -> Result<Matrix> {
    check_model(x, weights, layers)?;
    let mut h = x.clone();
    for (w, layer) in weights.iter().zip(layers) {
        h = adj.aggregate(&h)?.matmul(w)?;
        if layer.activation == Activation::Square {
            h = h.map(|v| v * v);
        }
    }
    Ok(h)
}

pub(crate) fn check_model(x: &Matrix, weights: &[Matrix], layers: &[LayerSpec]) -> Result<()> {
    if weights.len() != layers.len() {
        return Err(Error::Dimension(format!(
            "{} weight matrices for {} layers",
            weights.len(),
            layers.len()
        )));
    }
    let mut f = x.cols();
    for (i, (w, l)) in weights.iter().zip(layers).enumerate() {
        if l.f_in != f || w.rows() != l.f_in || w.cols() != l.f_out {
            return Err(Error::Dimension(format!(
                "layer {i}: expects {}x{} weights on {f} input features, got {}x{}",
                l.f_in,
                l.f_out,
                w.rows(),
                w.cols()
            )));
        }
        f = l.f_out;
    }
    Ok(())
}

/// Normwise relative error of a simulated result against the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl VerifyReport {
    pub const TOLERANCE: f64 = 1e-6;

    /// Non-finite values on either side count as an unbounded error.
    pub fn compare(got: &Matrix, oracle: &Matrix) -> Self {
        if !got.is_finite() || !oracle.is_finite() {
            return Self {
                max_abs_error: f64::INFINITY,
                max_rel_error: f64::INFINITY,
                tolerance: Self::TOLERANCE,
            };
        }
        let max_abs_error = got.max_abs_diff(oracle);
        let scale = oracle.max_abs();
        let max_rel_error = if scale > 0.0 {
            max_abs_error / scale
        } else {
            max_abs_error
        };
        Self {
            max_abs_error,
            max_rel_error,
            tolerance: Self::TOLERANCE,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}
