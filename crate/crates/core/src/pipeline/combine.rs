use crate::error::{Error, Result};
use crate::interca::Aggregated;
use crate::matrix::Matrix;
use crate::packing::SlotLayout;
use crate::slotvm::{CipherVec, SlotVm};

/// Node slots of one row block, for every column block in `blocks`.
fn node_slots<'a>(
    layout: &'a SlotLayout,
    row_block: usize,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    let ring = layout.ring();
    layout
        .positions()
        .iter()
        .enumerate()
        .filter(move |(_, &p)| p / ring == row_block)
        .map(move |(v, &p)| (v, p % ring))
}

/// `X·W` on aggregated ciphertexts, folding the pending per-node scale into
/// the plaintext weights. With `t > 1` each output feature is summed across
/// the column blocks by a strided rotation reduction and masked into its
/// block of the output ciphertext.
pub fn combine(
    vm: &mut SlotVm,
    agg: &Aggregated,
    w: &Matrix,
    layout: &SlotLayout,
) -> Result<Vec<CipherVec>> {
    let f_in = layout.num_features();
    if w.rows() != f_in || agg.cts.len() != layout.num_ciphertexts() {
        return Err(Error::Dimension(format!(
            "combination expects {f_in} input features, weights have {} rows",
            w.rows()
        )));
    }
    let f_out = w.cols();
    let t = layout.t();
    let ring = layout.ring();
    let out_layout = layout.with_features(f_out);
    let groups_in = layout.column_groups();
    let groups_out = out_layout.column_groups();
    let mut out: Vec<Option<CipherVec>> = vec![None; out_layout.num_ciphertexts()];

    for rb in 0..layout.row_blocks() {
        let nodes: Vec<(usize, usize)> = node_slots(layout, rb).collect();
        for fo in 0..f_out {
            let mut partial: Option<CipherVec> = None;
            for g in 0..groups_in {
                let mut mask = vec![0.0; layout.slots()];
                for b in 0..t {
                    let f = g * t + b;
                    if f >= f_in {
                        break;
                    }
                    for &(v, p) in &nodes {
                        mask[b * ring + p] = w[(f, fo)] * agg.scale[v];
                    }
                }
                let term = vm.pmult(&agg.cts[rb * groups_in + g], &mask)?;
                partial = Some(match partial {
                    Some(acc) => vm.add(&acc, &term),
                    None => term,
                });
            }
            let mut value = partial.expect("at least one input group");
            if t > 1 {
                value = vm.strided_sum(&value, t, ring);
                let block = fo % t;
                let mut select = vec![0.0; layout.slots()];
                for &(_, p) in &nodes {
                    select[block * ring + p] = 1.0;
                }
                value = vm.mask(&value, &select);
            }
            let slot = &mut out[rb * groups_out + fo / t];
            *slot = Some(match slot.take() {
                Some(acc) => vm.add(&acc, &value),
                None => value,
            });
        }
    }
    Ok(out
        .into_iter()
        .map(|c| c.expect("every output group written"))
        .collect())
}

/// Slot-wise square, one CMult per ciphertext.
pub fn activate_square(vm: &mut SlotVm, cts: &[CipherVec]) -> Result<Vec<CipherVec>> {
    cts.iter().map(|c| vm.cmult(c, c)).collect()
}
