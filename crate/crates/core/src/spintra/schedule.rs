//! Symbolic planning of the rotation schedule.
//!
//! The planner tracks, per stream, a list of live ciphertexts. Each one maps
//! ring positions to bundles: tokens that share a source and therefore the
//! same slot value. A bundle splits for free when its tokens disagree on the
//! current bit, since the stay mask and the rotated copy both read the slot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{aoo_assign, Token};
use crate::packing::SlotLayout;

/// Register holding a ciphertext value. Register 0 is the packed input.
pub type Reg = usize;
pub const INPUT: Reg = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    /// Global left rotation.
    Rot {
        dst: Reg,
        src: Reg,
        amount: usize,
    },
    /// 0/1 plaintext multiply selecting the ring positions of `masks[mask]`
    /// in every column block.
    Mask {
        dst: Reg,
        src: Reg,
        mask: usize,
    },
    Add {
        dst: Reg,
        lhs: Reg,
        rhs: Reg,
    },
    /// Copies the listed token slots into the accumulator of their output.
    Deliver {
        src: Reg,
        delivery: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    /// Bit being processed; `None` for the initial shift-0 deliveries.
    pub bit: Option<u32>,
    /// Logical ciphertext the op belongs to.
    pub ct: usize,
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub output: usize,
    /// `(ring position of the target, token index)`.
    pub entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleStats {
    pub rot: u64,
    pub mask: u64,
    pub add: u64,
    pub deliver: u64,
    pub ciphertexts: u64,
    pub max_live: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationSchedule {
    slots: usize,
    ring: usize,
    outputs: usize,
    tokens: Vec<Token>,
    steps: Vec<Step>,
    masks: Vec<Vec<usize>>,
    deliveries: Vec<Delivery>,
    registers: usize,
    ciphertexts: usize,
    max_live: usize,
}

impl RotationSchedule {
    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn ring(&self) -> usize {
        self.ring
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn mask(&self, id: usize) -> &[usize] {
        &self.masks[id]
    }

    pub fn delivery(&self, id: usize) -> &Delivery {
        &self.deliveries[id]
    }

    pub fn registers(&self) -> usize {
        self.registers
    }

    pub fn rot_count(&self) -> u64 {
        self.stats().rot
    }

    pub fn stats(&self) -> ScheduleStats {
        let mut s = ScheduleStats {
            ciphertexts: self.ciphertexts as u64,
            max_live: self.max_live as u64,
            ..Default::default()
        };
        for step in &self.steps {
            match step.op {
                Op::Rot { .. } => s.rot += 1,
                Op::Mask { .. } => s.mask += 1,
                Op::Add { .. } => s.add += 1,
                Op::Deliver { .. } => s.deliver += 1,
            }
        }
        s
    }

    /// One line per op: `bit=<m|init> ct=<id> op=<Rot|PMult|Add|Deliver> arg=<..>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            let bit = step.bit.map_or("init".to_string(), |b| b.to_string());
            let (op, arg) = match &step.op {
                Op::Rot { amount, .. } => ("Rot", amount.to_string()),
                Op::Mask { mask, .. } => ("PMult", format!("m{mask}")),
                Op::Add { lhs, rhs, .. } => ("Add", format!("r{lhs}+r{rhs}")),
                Op::Deliver { delivery, .. } => (
                    "Deliver",
                    format!("k{}:d{delivery}", self.deliveries[*delivery].output),
                ),
            };
            let _ = writeln!(out, "bit={bit} ct={} op={op} arg={arg}", step.ct);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    pub aoo: bool,
    /// Density below which CPOO rewrites apply; `0` disables CPOO.
    pub cpoo_threshold: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            aoo: true,
            cpoo_threshold: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
struct Bundle {
    source: usize,
    tokens: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Live {
    id: usize,
    reg: Option<Reg>,
    slots: BTreeMap<usize, Bundle>,
    /// Positions that may hold a nonzero value.
    nonzero: BTreeSet<usize>,
}

impl Live {
    fn is_clean(&self) -> bool {
        self.nonzero.len() == self.slots.len()
    }
}

struct Eviction {
    rotated: Reg,
    from: usize,
    at: usize,
    bundle: Bundle,
}

struct Planner<'a> {
    slots: usize,
    ring: usize,
    bits: u32,
    positions: &'a [usize],
    tokens: &'a [Token],
    rem: Vec<usize>,
    delivered: Vec<bool>,
    threshold: f64,
    steps: Vec<Step>,
    /// Rotations of a whole sparse ciphertext whose result may be folded
    /// into the next rotation.
    fusable: Vec<bool>,
    masks: Vec<Vec<usize>>,
    deliveries: Vec<Delivery>,
    next_reg: Reg,
    next_ct: usize,
    max_live: usize,
}

impl Planner<'_> {
    fn emit(&mut self, bit: Option<u32>, ct: usize, op: Op) {
        self.steps.push(Step { bit, ct, op });
        self.fusable.push(false);
    }

    fn fresh(&mut self) -> Reg {
        self.next_reg += 1;
        self.next_reg
    }

    fn rot(&mut self, bit: Option<u32>, ct: usize, src: Reg, amount: usize) -> Reg {
        let dst = self.fresh();
        self.emit(bit, ct, Op::Rot { dst, src, amount });
        dst
    }

    fn mask(&mut self, bit: Option<u32>, ct: usize, src: Reg, positions: Vec<usize>) -> Reg {
        let dst = self.fresh();
        let mask = self.masks.len();
        self.masks.push(positions);
        self.emit(bit, ct, Op::Mask { dst, src, mask });
        dst
    }

    fn add(&mut self, bit: Option<u32>, ct: usize, lhs: Reg, rhs: Reg) -> Reg {
        let dst = self.fresh();
        self.emit(bit, ct, Op::Add { dst, lhs, rhs });
        dst
    }

    fn deliver(
        &mut self,
        bit: Option<u32>,
        ct: usize,
        src: Reg,
        output: usize,
        entries: Vec<(usize, usize)>,
    ) {
        for &(_, tok) in &entries {
            assert!(
                !std::mem::replace(&mut self.delivered[tok], true),
                "token {tok} delivered twice"
            );
        }
        let delivery = self.deliveries.len();
        self.deliveries.push(Delivery { output, entries });
        self.emit(bit, ct, Op::Deliver { src, delivery });
    }

    fn wraps(&self, p: usize, d: usize) -> bool {
        p < d && self.slots != self.ring
    }

    fn new_ct(&mut self) -> usize {
        self.next_ct += 1;
        self.next_ct - 1
    }

    fn plan_stream(&mut self, output: usize, members: &[usize]) {
        let ct0 = self.new_ct();
        let mut initial = Vec::new();
        let mut slots: BTreeMap<usize, Bundle> = BTreeMap::new();
        for &i in members {
            let t = &self.tokens[i];
            if t.shift == 0 {
                initial.push((self.positions[t.target], i));
            } else {
                slots
                    .entry(self.positions[t.source])
                    .or_insert_with(|| Bundle {
                        source: t.source,
                        tokens: Vec::new(),
                    })
                    .tokens
                    .push(i);
            }
        }
        if !initial.is_empty() {
            self.deliver(None, ct0, INPUT, output, initial);
        }
        let mut live = Vec::new();
        if !slots.is_empty() {
            live.push(Live {
                id: ct0,
                reg: Some(INPUT),
                slots,
                nonzero: self.positions.iter().copied().collect(),
            });
        }
        for m in 0..self.bits {
            if live.is_empty() {
                break;
            }
            self.max_live = self.max_live.max(live.len());
            let evictions = self.bit_step(m, &mut live);
            self.place(m, &mut live, evictions);
            self.deliver_ready(m, output, &mut live);
            if self.threshold > 0.0 && m + 1 < self.bits {
                self.merge_sparse(m, &mut live);
            }
        }
        assert!(live.is_empty(), "stream {output} ended with live tokens");
    }

    fn bit_step(&mut self, m: u32, live: &mut [Live]) -> Vec<Eviction> {
        let d = 1usize << m;
        let mut evictions = Vec::new();
        for c in live.iter_mut() {
            let mut stayers: BTreeMap<usize, Bundle> = BTreeMap::new();
            let mut movers: Vec<(usize, usize, Bundle)> = Vec::new();
            for (&p, b) in &c.slots {
                let (mv, st): (Vec<usize>, Vec<usize>) =
                    b.tokens.iter().partition(|&&i| self.rem[i] & d != 0);
                if !st.is_empty() {
                    stayers.insert(
                        p,
                        Bundle {
                            source: b.source,
                            tokens: st,
                        },
                    );
                }
                if !mv.is_empty() {
                    movers.push((
                        p,
                        (p + self.ring - d) % self.ring,
                        Bundle {
                            source: b.source,
                            tokens: mv,
                        },
                    ));
                }
            }
            if movers.is_empty() {
                continue;
            }
            for (_, _, b) in &movers {
                for &i in &b.tokens {
                    self.rem[i] -= d;
                }
            }
            let src = c.reg.expect("live ciphertext has a value");
            let mut rotated: [Option<Reg>; 2] = [None, None];
            let mut kept: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            let mut new_slots = stayers.clone();
            let mut evicted: Vec<(usize, usize, Bundle)> = Vec::new();
            for (p, q, b) in movers {
                let dir = usize::from(self.wraps(p, d));
                match stayers.get(&q) {
                    Some(s) if s.source == b.source => {
                        new_slots
                            .get_mut(&q)
                            .expect("stayer")
                            .tokens
                            .extend(b.tokens);
                    }
                    Some(_) => evicted.push((dir, q, b)),
                    None => {
                        kept[dir].push(q);
                        new_slots.insert(q, b);
                    }
                }
            }
            for dir in 0..2 {
                let used = !kept[dir].is_empty() || evicted.iter().any(|e| e.0 == dir);
                if used {
                    let amount = if dir == 1 {
                        self.slots - self.ring + d
                    } else {
                        d
                    };
                    rotated[dir] = Some(self.rot(Some(m), c.id, src, amount));
                }
            }
            let dirs_used = rotated.iter().filter(|r| r.is_some()).count();
            let any_kept = kept.iter().any(|k| !k.is_empty());
            if stayers.is_empty() && evicted.is_empty() && dirs_used == 1 && c.is_clean() {
                if (c.slots.len() as f64) < self.threshold * self.ring as f64 {
                    *self.fusable.last_mut().expect("rotation just emitted") = true;
                }
                c.reg = rotated.iter().flatten().next().copied();
                c.nonzero = kept.iter().flatten().copied().collect();
            } else if any_kept {
                let mut parts = Vec::new();
                if !stayers.is_empty() {
                    parts.push(self.mask(Some(m), c.id, src, stayers.keys().copied().collect()));
                }
                for dir in 0..2 {
                    if !kept[dir].is_empty() {
                        let mut qs = std::mem::take(&mut kept[dir]);
                        qs.sort_unstable();
                        let r = rotated[dir].expect("rotation for kept movers");
                        parts.push(self.mask(Some(m), c.id, r, qs.clone()));
                        kept[dir] = qs;
                    }
                }
                let mut acc = parts[0];
                for &p in &parts[1..] {
                    acc = self.add(Some(m), c.id, acc, p);
                }
                c.reg = Some(acc);
                c.nonzero = stayers
                    .keys()
                    .chain(kept.iter().flatten())
                    .copied()
                    .collect();
            }
            c.slots = new_slots;
            for (dir, q, bundle) in evicted {
                evictions.push(Eviction {
                    rotated: rotated[dir].expect("rotation for evicted movers"),
                    from: c.id,
                    at: q,
                    bundle,
                });
            }
        }
        evictions
    }

    /// Moves evicted bundles into the first ciphertext of the stream whose
    /// landing slot is empty (or already carries the same source).
    fn place(&mut self, m: u32, live: &mut Vec<Live>, evictions: Vec<Eviction>) {
        let mut groups: Vec<((usize, Reg), Vec<usize>)> = Vec::new();
        for e in evictions {
            let target = live.iter().position(|c| {
                c.id != e.from
                    && match c.slots.get(&e.at) {
                        Some(b) => b.source == e.bundle.source,
                        None => !c.nonzero.contains(&e.at),
                    }
            });
            let j = match target {
                Some(j) => j,
                None => {
                    let id = self.new_ct();
                    live.push(Live {
                        id,
                        reg: None,
                        slots: BTreeMap::new(),
                        nonzero: BTreeSet::new(),
                    });
                    live.len() - 1
                }
            };
            let c = &mut live[j];
            if let Some(b) = c.slots.get_mut(&e.at) {
                b.tokens.extend(e.bundle.tokens);
                continue;
            }
            c.slots.insert(e.at, e.bundle);
            c.nonzero.insert(e.at);
            match groups.iter_mut().find(|(key, _)| *key == (j, e.rotated)) {
                Some((_, qs)) => qs.push(e.at),
                None => groups.push(((j, e.rotated), vec![e.at])),
            }
        }
        for ((j, rotated), mut qs) in groups {
            qs.sort_unstable();
            let id = live[j].id;
            let masked = self.mask(Some(m), id, rotated, qs);
            live[j].reg = Some(match live[j].reg {
                Some(r) => self.add(Some(m), id, r, masked),
                None => masked,
            });
        }
    }

    fn deliver_ready(&mut self, m: u32, output: usize, live: &mut Vec<Live>) {
        for c in live.iter_mut() {
            let mut entries = Vec::new();
            for (&p, b) in c.slots.iter_mut() {
                b.tokens.retain(|&i| {
                    if self.rem[i] == 0 {
                        entries.push((p, i));
                        false
                    } else {
                        true
                    }
                });
            }
            c.slots.retain(|_, b| !b.tokens.is_empty());
            if !entries.is_empty() {
                let src = c.reg.expect("live ciphertext has a value");
                self.deliver(Some(m), c.id, src, output, entries);
            }
        }
        live.retain(|c| !c.slots.is_empty());
    }

    fn density(&self, c: &Live) -> f64 {
        c.slots.len() as f64 / self.ring as f64
    }

    /// Adds together sparse ciphertexts whose possibly-nonzero slots are
    /// disjoint.
    fn merge_sparse(&mut self, m: u32, live: &mut Vec<Live>) {
        let mut i = 0;
        while i < live.len() {
            let mut j = i + 1;
            while j < live.len() {
                let (a, b) = (&live[i], &live[j]);
                let merged = (a.slots.len() + b.slots.len()) as f64 / self.ring as f64;
                if self.density(a) < self.threshold
                    && merged < self.threshold
                    && a.nonzero.is_disjoint(&b.nonzero)
                {
                    let b = live.remove(j);
                    let a = &mut live[i];
                    let reg = self.add(
                        Some(m),
                        a.id,
                        a.reg.expect("live value"),
                        b.reg.expect("live value"),
                    );
                    a.reg = Some(reg);
                    a.slots.extend(b.slots);
                    a.nonzero.extend(b.nonzero);
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
    }
}

/// Folds `Rot(b) ∘ Rot(a)` into `Rot(a + b)` when the first result is read
/// by nothing but the second rotation.
fn fuse_rotations(steps: Vec<Step>, fusable: &[bool], slots: usize, registers: usize) -> Vec<Step> {
    let mut readers = vec![0usize; registers];
    for step in &steps {
        match step.op {
            Op::Rot { src, .. } | Op::Mask { src, .. } | Op::Deliver { src, .. } => {
                readers[src] += 1
            }
            Op::Add { lhs, rhs, .. } => {
                readers[lhs] += 1;
                readers[rhs] += 1;
            }
        }
    }
    // register -> (index in `out`, source, amount) of a fusable rotation
    let mut produced: Vec<Option<(usize, Reg, usize)>> = vec![None; registers];
    let mut out: Vec<Option<Step>> = Vec::with_capacity(steps.len());
    for (step, &fuse) in steps.into_iter().zip(fusable) {
        let mut step = step;
        if let Op::Rot { dst, src, amount } = step.op {
            if let Some((at, first_src, first_amount)) = produced[src] {
                if readers[src] == 1 {
                    out[at] = None;
                    step.op = Op::Rot {
                        dst,
                        src: first_src,
                        amount: (first_amount + amount) % slots,
                    };
                }
            }
            if fuse {
                if let Op::Rot { src, amount, .. } = step.op {
                    produced[dst] = Some((out.len(), src, amount));
                }
            }
        }
        out.push(Some(step));
    }
    out.into_iter().flatten().collect()
}

/// Plans the schedule for the given tokens with an explicit CPOO threshold
/// and no fallback.
pub fn cpoo_optimize(tokens: &[Token], layout: &SlotLayout, threshold: f64) -> RotationSchedule {
    let ring = layout.ring();
    let outputs = tokens.iter().map(|t| t.output + 1).max().unwrap_or(0);
    let mut p = Planner {
        slots: layout.slots(),
        ring,
        bits: ring.trailing_zeros(),
        positions: layout.positions(),
        tokens,
        rem: tokens.iter().map(|t| t.shift).collect(),
        delivered: vec![false; tokens.len()],
        threshold,
        steps: Vec::new(),
        fusable: Vec::new(),
        masks: Vec::new(),
        deliveries: Vec::new(),
        next_reg: INPUT,
        next_ct: 0,
        max_live: 0,
    };
    for k in 0..outputs {
        let members: Vec<usize> = (0..tokens.len())
            .filter(|&i| tokens[i].output == k)
            .collect();
        p.plan_stream(k, &members);
    }
    assert!(
        p.delivered.iter().all(|&d| d),
        "token conservation violated"
    );
    let steps = fuse_rotations(p.steps, &p.fusable, layout.slots(), p.next_reg + 1);
    RotationSchedule {
        slots: layout.slots(),
        ring,
        outputs,
        tokens: tokens.to_vec(),
        steps,
        masks: p.masks,
        deliveries: p.deliveries,
        registers: p.next_reg + 1,
        ciphertexts: p.next_ct,
        max_live: p.max_live,
    }
}

/// Full planner: optional AOO, then the CPOO rewrite kept only if it does
/// not add rotations.
pub fn build_schedule(
    tokens: &[Token],
    layout: &SlotLayout,
    opts: &ScheduleOptions,
) -> RotationSchedule {
    let tokens = if opts.aoo {
        aoo_assign(tokens, layout)
    } else {
        tokens.to_vec()
    };
    let baseline = cpoo_optimize(&tokens, layout, 0.0);
    if opts.cpoo_threshold <= 0.0 {
        return baseline;
    }
    let rewritten = cpoo_optimize(&tokens, layout, opts.cpoo_threshold);
    if rewritten.rot_count() <= baseline.rot_count() {
        rewritten
    } else {
        baseline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot(dst: Reg, src: Reg, amount: usize) -> Step {
        Step {
            bit: Some(0),
            ct: 0,
            op: Op::Rot { dst, src, amount },
        }
    }

    #[test]
    fn chained_rotations_fuse() {
        let steps = vec![rot(1, 0, 2), rot(2, 1, 4)];
        let fused = fuse_rotations(steps, &[true, true], 8, 3);
        assert_eq!(fused, vec![rot(2, 0, 6)]);
    }

    #[test]
    fn shared_intermediate_is_kept() {
        let deliver = Step {
            bit: Some(1),
            ct: 0,
            op: Op::Deliver {
                src: 1,
                delivery: 0,
            },
        };
        let steps = vec![rot(1, 0, 2), deliver.clone(), rot(2, 1, 4)];
        let fused = fuse_rotations(steps.clone(), &[true, false, true], 8, 3);
        assert_eq!(fused, steps);
    }

    #[test]
    fn dense_rotations_untouched() {
        let steps = vec![rot(1, 0, 2), rot(2, 1, 4)];
        assert_eq!(fuse_rotations(steps.clone(), &[false, false], 8, 3), steps);
    }
}
