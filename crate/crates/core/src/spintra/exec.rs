use super::schedule::{Op, RotationSchedule, INPUT};
use crate::error::{Error, Result};
use crate::interca::Aggregated;
use crate::packing::SlotLayout;
use crate::slotvm::{CipherVec, SlotVm};

#[derive(Debug, Clone, Copy)]
pub enum DeliveryMode<'a> {
    /// 0/1 delivery masks into one accumulator per output: slot `v` of
    /// output `k` ends up holding neighbor `k` of `v`.
    Unit,
    /// Delivery masks carry `w / w_self[target]` and all outputs share one
    /// accumulator seeded with the input (the self term).
    Weighted { self_weights: &'a [f64] },
}

#[derive(Debug, Clone)]
pub enum SpintraOutput {
    /// `[output][ciphertext]`.
    Neighbors(Vec<Vec<CipherVec>>),
    Aggregated(Aggregated),
}

fn spread(layout: &SlotLayout, entries: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let ring = layout.ring();
    let mut m = vec![0.0; layout.slots()];
    for (p, w) in entries {
        for b in 0..layout.t() {
            m[b * ring + p] = w;
        }
    }
    m
}

/// Replays the schedule on every column-group ciphertext of the input.
pub fn exec_spintra(
    vm: &mut SlotVm,
    schedule: &RotationSchedule,
    input: &[CipherVec],
    layout: &SlotLayout,
    mode: DeliveryMode<'_>,
) -> Result<SpintraOutput> {
    if layout.ring() != schedule.ring()
        || layout.slots() != schedule.slots()
        || !layout.fits_ring()
        || input.len() != layout.num_ciphertexts()
    {
        return Err(Error::Dimension(
            "input ciphertexts do not match the schedule geometry".into(),
        ));
    }
    let mut last_use = vec![usize::MAX; schedule.registers()];
    for (i, step) in schedule.steps().iter().enumerate() {
        match step.op {
            Op::Rot { src, .. } | Op::Mask { src, .. } | Op::Deliver { src, .. } => {
                last_use[src] = i
            }
            Op::Add { lhs, rhs, .. } => {
                last_use[lhs] = i;
                last_use[rhs] = i;
            }
        }
    }
    let outputs = schedule.outputs();
    let mut neighbors: Vec<Vec<CipherVec>> = vec![Vec::new(); outputs];
    let mut aggregated = Vec::new();

    for ct in input {
        let mut regs: Vec<Option<CipherVec>> = vec![None; schedule.registers()];
        regs[INPUT] = Some(ct.clone());
        let mut unit_acc: Vec<Option<CipherVec>> = vec![None; outputs];
        let mut weighted_acc = ct.clone();
        for (i, step) in schedule.steps().iter().enumerate() {
            let get = |regs: &[Option<CipherVec>], r: usize| -> CipherVec {
                regs[r].clone().expect("register read after release")
            };
            match step.op {
                Op::Rot { dst, src, amount } => {
                    let v = vm.rot(regs[src].as_ref().expect("live register"), amount);
                    regs[dst] = Some(v);
                }
                Op::Mask { dst, src, mask } => {
                    let m = spread(layout, schedule.mask(mask).iter().map(|&p| (p, 1.0)));
                    let v = vm.mask(regs[src].as_ref().expect("live register"), &m);
                    regs[dst] = Some(v);
                }
                Op::Add { dst, lhs, rhs } => {
                    let v = vm.add(&get(&regs, lhs), &get(&regs, rhs));
                    regs[dst] = Some(v);
                }
                Op::Deliver { src, delivery } => {
                    let d = schedule.delivery(delivery);
                    let value = regs[src].as_ref().expect("live register");
                    match mode {
                        DeliveryMode::Unit => {
                            let m = spread(layout, d.entries.iter().map(|&(p, _)| (p, 1.0)));
                            let part = vm.mask(value, &m);
                            let acc = &mut unit_acc[d.output];
                            *acc = Some(match acc.take() {
                                Some(a) => vm.add(&a, &part),
                                None => part,
                            });
                        }
                        DeliveryMode::Weighted { self_weights } => {
                            let tokens = schedule.tokens();
                            let m = spread(
                                layout,
                                d.entries.iter().map(|&(p, tok)| {
                                    let t = &tokens[tok];
                                    (p, t.weight / self_weights[t.target])
                                }),
                            );
                            let part = vm.pmult(value, &m)?;
                            weighted_acc = vm.add(&weighted_acc, &part);
                        }
                    }
                }
            }
            let reads: [Option<usize>; 2] = match step.op {
                Op::Rot { src, .. } | Op::Mask { src, .. } | Op::Deliver { src, .. } => {
                    [Some(src), None]
                }
                Op::Add { lhs, rhs, .. } => [Some(lhs), Some(rhs)],
            };
            for r in reads.into_iter().flatten() {
                if last_use[r] == i {
                    regs[r] = None;
                }
            }
        }
        match mode {
            DeliveryMode::Unit => {
                for (k, acc) in unit_acc.into_iter().enumerate() {
                    neighbors[k]
                        .push(acc.unwrap_or_else(|| CipherVec::zeros(layout.slots(), ct.level())));
                }
            }
            DeliveryMode::Weighted { .. } => aggregated.push(weighted_acc),
        }
    }
    Ok(match mode {
        DeliveryMode::Unit => SpintraOutput::Neighbors(neighbors),
        DeliveryMode::Weighted { self_weights } => SpintraOutput::Aggregated(Aggregated {
            cts: aggregated,
            scale: self_weights.to_vec(),
        }),
    })
}
