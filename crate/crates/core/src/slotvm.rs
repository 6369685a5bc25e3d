//! Exact-arithmetic model of CKKS SIMD slot operations.
//!
//! A [`CipherVec`] carries `S` real slots, a remaining multiplication level
//! and an occupancy bitmap. [`SlotVm`] applies Add / PMult / CMult / Rot to
//! them and tallies every operation into a [`HocReport`] priced by a
//! [`CostModel`]. There is no noise and no key material.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Rot,
    PMult,
    CMult,
    Add,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Rot, OpKind::PMult, OpKind::CMult, OpKind::Add];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Rot => "rot",
            OpKind::PMult => "pmult",
            OpKind::CMult => "cmult",
            OpKind::Add => "add",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelScaling {
    Flat,
    /// latency(level) = base * (level + 1) / (top + 1)
    Linear {
        top: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub rot: f64,
    pub cmult: f64,
    pub pmult: f64,
    pub add: f64,
    pub scaling: LevelScaling,
    /// Seconds represented by one latency unit, used only to relate model
    /// latency to wall-clock preprocessing time.
    pub unit_seconds: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            rot: 20.0,
            cmult: 20.0,
            pmult: 1.0,
            add: 1.0,
            scaling: LevelScaling::Flat,
            // 70.08 s for ~395K PMult+Add in a measured Inter-CA layer.
            unit_seconds: 70.08 / 395_000.0,
        }
    }
}

impl CostModel {
    /// Flat model with a custom Rot/PMult ratio (CMult follows Rot).
    pub fn with_rot_ratio(ratio: f64) -> Self {
        Self {
            rot: ratio,
            cmult: ratio,
            ..Self::default()
        }
    }

    pub fn latency(&self, kind: OpKind, level: u32) -> f64 {
        let base = match kind {
            OpKind::Rot => self.rot,
            OpKind::PMult => self.pmult,
            OpKind::CMult => self.cmult,
            OpKind::Add => self.add,
        };
        match self.scaling {
            LevelScaling::Flat => base,
            LevelScaling::Linear { top } => base * (level.min(top) + 1) as f64 / (top + 1) as f64,
        }
    }

    pub fn rot_ratio(&self) -> f64 {
        self.rot / self.pmult
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub rot: u64,
    pub pmult: u64,
    pub cmult: u64,
    pub add: u64,
}

impl OpCounts {
    pub fn get(&self, kind: OpKind) -> u64 {
        match kind {
            OpKind::Rot => self.rot,
            OpKind::PMult => self.pmult,
            OpKind::CMult => self.cmult,
            OpKind::Add => self.add,
        }
    }

    fn bump(&mut self, kind: OpKind, by: u64) {
        match kind {
            OpKind::Rot => self.rot += by,
            OpKind::PMult => self.pmult += by,
            OpKind::CMult => self.cmult += by,
            OpKind::Add => self.add += by,
        }
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            rot: self.rot + o.rot,
            pmult: self.pmult + o.pmult,
            cmult: self.cmult + o.cmult,
            add: self.add + o.add,
        }
    }
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, o: OpCounts) -> OpCounts {
        OpCounts {
            rot: self.rot - o.rot,
            pmult: self.pmult - o.pmult,
            cmult: self.cmult - o.cmult,
            add: self.add - o.add,
        }
    }
}

/// Per-stage tallies for one segment of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageHoc {
    pub name: String,
    pub counts: OpCounts,
    pub latency: f64,
}

/// Homomorphic operation counts, with a histogram by execution level so the
/// total latency can be recomputed from the report alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HocReport {
    pub total: OpCounts,
    pub latency: f64,
    pub by_level: BTreeMap<(OpKind, u32), u64>,
    pub stages: Vec<StageHoc>,
}

impl HocReport {
    pub fn record(&mut self, kind: OpKind, level: u32, cost: &CostModel) {
        self.record_many(kind, level, 1, cost);
    }

    pub fn record_many(&mut self, kind: OpKind, level: u32, count: u64, cost: &CostModel) {
        if count == 0 {
            return;
        }
        let lat = cost.latency(kind, level) * count as f64;
        self.total.bump(kind, count);
        self.latency += lat;
        *self.by_level.entry((kind, level)).or_default() += count;
        if let Some(stage) = self.stages.last_mut() {
            stage.counts.bump(kind, count);
            stage.latency += lat;
        }
    }

    /// Opens a new stage; subsequent records are attributed to it.
    pub fn begin_stage(&mut self, name: impl Into<String>) {
        self.stages.push(StageHoc {
            name: name.into(),
            ..StageHoc::default()
        });
    }

    pub fn stage(&self, name: &str) -> Option<&StageHoc> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Latency recomputed from the level histogram.
    pub fn recompute_latency(&self, cost: &CostModel) -> f64 {
        self.by_level
            .iter()
            .map(|(&(kind, level), &count)| cost.latency(kind, level) * count as f64)
            .sum()
    }

    /// Folds another report (e.g. from an independent stream) into this one.
    pub fn merge(&mut self, other: &HocReport) {
        self.total = self.total + other.total;
        self.latency += other.latency;
        for (k, v) in &other.by_level {
            *self.by_level.entry(*k).or_default() += v;
        }
        for s in &other.stages {
            match self.stages.iter_mut().find(|m| m.name == s.name) {
                Some(m) => {
                    m.counts = m.counts + s.counts;
                    m.latency += s.latency;
                }
                None => self.stages.push(s.clone()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CipherVec {
    slots: Vec<f64>,
    level: u32,
    occupancy: Vec<bool>,
}

impl CipherVec {
    /// "Encrypts" a slot vector; every slot is marked live.
    pub fn encrypt(slots: Vec<f64>, level: u32) -> Self {
        assert!(
            slots.len().is_power_of_two(),
            "slot count must be a power of two"
        );
        let occupancy = vec![true; slots.len()];
        Self {
            slots,
            level,
            occupancy,
        }
    }

    pub fn with_occupancy(slots: Vec<f64>, level: u32, occupancy: Vec<bool>) -> Self {
        assert!(
            slots.len().is_power_of_two(),
            "slot count must be a power of two"
        );
        assert_eq!(slots.len(), occupancy.len());
        Self {
            slots,
            level,
            occupancy,
        }
    }

    pub fn zeros(slot_count: usize, level: u32) -> Self {
        Self::with_occupancy(vec![0.0; slot_count], level, vec![false; slot_count])
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn decrypt(&self) -> Vec<f64> {
        self.slots.clone()
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.occupancy.iter().filter(|&&o| o).count() as f64 / self.slots.len() as f64
    }
}

/// Evaluator: applies slot operations and owns the HOC accumulator for one
/// execution stream.
#[derive(Debug, Clone)]
pub struct SlotVm {
    slot_count: usize,
    cost: CostModel,
    hoc: HocReport,
    context: String,
}

impl SlotVm {
    pub fn new(slot_count: usize, cost: CostModel) -> Self {
        assert!(
            slot_count.is_power_of_two(),
            "slot count must be a power of two"
        );
        Self {
            slot_count,
            cost,
            hoc: HocReport::default(),
            context: "run".into(),
        }
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn hoc(&self) -> &HocReport {
        &self.hoc
    }

    pub fn into_hoc(self) -> HocReport {
        self.hoc
    }

    pub fn hoc_mut(&mut self) -> &mut HocReport {
        &mut self.hoc
    }

    /// Names the current stage; used both for HOC attribution and in
    /// level-exhaustion errors.
    pub fn begin_stage(&mut self, name: impl Into<String>) {
        let name = name.into();
        self.context = name.clone();
        self.hoc.begin_stage(name);
    }

    fn check_len(&self, c: &CipherVec) {
        assert_eq!(c.len(), self.slot_count, "ciphertext slot count mismatch");
    }

    /// Left rotation: result slot `i` holds input slot `(i + k) mod S`.
    pub fn rot(&mut self, c: &CipherVec, k: usize) -> CipherVec {
        self.check_len(c);
        let k = k % self.slot_count;
        if k == 0 {
            return c.clone();
        }
        self.hoc.record(OpKind::Rot, c.level, &self.cost);
        let mut slots = c.slots.clone();
        slots.rotate_left(k);
        let mut occupancy = c.occupancy.clone();
        occupancy.rotate_left(k);
        CipherVec {
            slots,
            level: c.level,
            occupancy,
        }
    }

    /// Plaintext multiply with rescale: consumes one level.
    pub fn pmult(&mut self, c: &CipherVec, m: &[f64]) -> Result<CipherVec> {
        self.check_len(c);
        if c.level == 0 {
            return Err(Error::LevelExhausted {
                op: "pmult",
                context: self.context.clone(),
            });
        }
        let mut out = self.masked(c, m);
        out.level -= 1;
        Ok(out)
    }

    /// Multiply by a 0/1 plaintext. The mask is encoded at unit scale so no
    /// rescale (and no level) is needed; it is still billed as a PMult.
    pub fn mask(&mut self, c: &CipherVec, m: &[f64]) -> CipherVec {
        debug_assert!(m.iter().all(|&v| v == 0.0 || v == 1.0), "mask must be 0/1");
        self.check_len(c);
        self.masked(c, m)
    }

    fn masked(&mut self, c: &CipherVec, m: &[f64]) -> CipherVec {
        assert_eq!(m.len(), self.slot_count, "plaintext length mismatch");
        self.hoc.record(OpKind::PMult, c.level, &self.cost);
        let slots = c.slots.iter().zip(m).map(|(a, b)| a * b).collect();
        let occupancy = c
            .occupancy
            .iter()
            .zip(m)
            .map(|(&o, &b)| o && b != 0.0)
            .collect();
        CipherVec {
            slots,
            level: c.level,
            occupancy,
        }
    }

    pub fn add(&mut self, a: &CipherVec, b: &CipherVec) -> CipherVec {
        self.check_len(a);
        self.check_len(b);
        let level = a.level.min(b.level);
        self.hoc.record(OpKind::Add, level, &self.cost);
        CipherVec {
            slots: a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect(),
            level,
            occupancy: a
                .occupancy
                .iter()
                .zip(&b.occupancy)
                .map(|(&x, &y)| x || y)
                .collect(),
        }
    }

    /// Ciphertext-ciphertext multiply; consumes one level.
    pub fn cmult(&mut self, a: &CipherVec, b: &CipherVec) -> Result<CipherVec> {
        self.check_len(a);
        self.check_len(b);
        let level = a.level.min(b.level);
        if level == 0 {
            return Err(Error::LevelExhausted {
                op: "cmult",
                context: self.context.clone(),
            });
        }
        self.hoc.record(OpKind::CMult, level, &self.cost);
        Ok(CipherVec {
            slots: a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect(),
            level: level - 1,
            occupancy: a
                .occupancy
                .iter()
                .zip(&b.occupancy)
                .map(|(&x, &y)| x && y)
                .collect(),
        })
    }

    /// Rotate-and-add reduction over `count` lanes spaced `stride` apart:
    /// afterwards slot `i` holds `sum_{j < count} c[i + j*stride]`.
    /// Costs `log2(count)` Rot and as many Add.
    pub fn strided_sum(&mut self, c: &CipherVec, count: usize, stride: usize) -> CipherVec {
        assert!(
            count.is_power_of_two(),
            "reduction width must be a power of two"
        );
        let mut acc = c.clone();
        let mut step = 1;
        while step < count {
            let rotated = self.rot(&acc, step * stride);
            acc = self.add(&acc, &rotated);
            step <<= 1;
        }
        acc
    }

    /// Each aligned block of `width` slots ends up holding its block sum in
    /// the block's first slot.
    pub fn internal_sum(&mut self, c: &CipherVec, width: usize) -> CipherVec {
        assert!(
            width.is_power_of_two() && self.slot_count.is_multiple_of(width),
            "width must be a power of two dividing the slot count"
        );
        self.strided_sum(c, width, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vm(s: usize) -> SlotVm {
        SlotVm::new(s, CostModel::default())
    }

    #[test]
    fn rotation_moves_left() {
        let mut vm = vm(4);
        let c = CipherVec::encrypt(vec![1.0, 2.0, 3.0, 4.0], 3);
        assert_eq!(vm.rot(&c, 1).slots(), &[2.0, 3.0, 4.0, 1.0]);
        assert_eq!(vm.hoc().total.rot, 1);
    }

    #[test]
    fn zero_rotation_is_free() {
        let mut vm = vm(4);
        let c = CipherVec::encrypt(vec![1.0, 2.0, 3.0, 4.0], 3);
        assert_eq!(vm.rot(&c, 0), c);
        assert_eq!(vm.hoc().total, OpCounts::default());
    }

    #[test]
    fn mask_product_and_occupancy() {
        let mut vm = vm(4);
        let c = CipherVec::encrypt(vec![1.0, 2.0, 3.0, 4.0], 1);
        let out = vm.pmult(&c, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(out.slots(), &[0.0, 2.0, 0.0, 4.0]);
        assert_eq!(out.occupancy(), &[false, true, false, true]);
        assert_eq!(out.level(), 0);
        assert!(matches!(
            vm.pmult(&out, &[1.0; 4]),
            Err(Error::LevelExhausted { op: "pmult", .. })
        ));
    }

    #[test]
    fn unit_mask_keeps_level() {
        let mut vm = vm(4);
        let c = CipherVec::encrypt(vec![1.0, 2.0, 3.0, 4.0], 1);
        let out = vm.mask(&c, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(out.level(), 1);
        assert_eq!(vm.hoc().total.pmult, 1);
    }

    #[test]
    fn add_identity_and_level() {
        let mut vm = vm(2);
        let a = CipherVec::encrypt(vec![1.0, 0.0], 3);
        let b = CipherVec::encrypt(vec![0.0, 2.0], 2);
        let s = vm.add(&a, &b);
        assert_eq!(s.slots(), &[1.0, 2.0]);
        assert_eq!(s.level(), 2);
        let z = CipherVec::zeros(2, 3);
        assert_eq!(vm.add(&a, &z).slots(), a.slots());
    }

    #[test]
    fn square_activation() {
        let mut vm = vm(2);
        let a = CipherVec::encrypt(vec![2.0, 3.0], 2);
        let sq = vm.cmult(&a, &a).unwrap();
        assert_eq!(sq.slots(), &[4.0, 9.0]);
        assert_eq!(sq.level(), 1);
        let ones = CipherVec::encrypt(vec![1.0, 1.0], 2);
        let same = vm.cmult(&a, &ones).unwrap();
        assert_eq!(same.slots(), a.slots());
        assert_eq!(vm.hoc().total.cmult, 2);
    }

    #[test]
    fn internal_sum_full_width() {
        let mut vm = vm(8);
        let c = CipherVec::encrypt((1..=8).map(f64::from).collect(), 1);
        let s = vm.internal_sum(&c, 8);
        assert_eq!(s.slots()[0], 36.0);
        assert_eq!(vm.hoc().total.rot, 3);
        assert_eq!(vm.hoc().total.add, 3);
    }

    #[test]
    fn internal_sum_width_one_is_free() {
        let mut vm = vm(8);
        let c = CipherVec::encrypt((1..=8).map(f64::from).collect(), 1);
        assert_eq!(vm.internal_sum(&c, 1), c);
        assert_eq!(vm.hoc().total, OpCounts::default());
    }

    #[test]
    fn latency_recomputes_from_histogram() {
        let cost = CostModel {
            scaling: LevelScaling::Linear { top: 6 },
            ..CostModel::default()
        };
        let mut vm = SlotVm::new(4, cost.clone());
        let c = CipherVec::encrypt(vec![1.0; 4], 6);
        let r = vm.rot(&c, 1);
        let p = vm.pmult(&r, &[2.0; 4]).unwrap();
        let _ = vm.rot(&p, 2);
        let hoc = vm.hoc();
        assert!((hoc.latency - hoc.recompute_latency(&cost)).abs() < 1e-12);
        assert!(hoc.latency < 20.0 + 1.0 + 20.0);
    }

    proptest! {
        #[test]
        fn rotation_composes(vals in prop::collection::vec(-10.0f64..10.0, 16), a in 0usize..16, b in 0usize..16) {
            let mut vm = vm(16);
            let c = CipherVec::encrypt(vals, 1);
            let twice = { let r = vm.rot(&c, a); vm.rot(&r, b) };
            prop_assert_eq!(twice, vm.rot(&c, (a + b) % 16));
        }

        #[test]
        fn add_commutes(x in prop::collection::vec(-10.0f64..10.0, 8), y in prop::collection::vec(-10.0f64..10.0, 8)) {
            let mut vm = vm(8);
            let a = CipherVec::encrypt(x, 2);
            let b = CipherVec::encrypt(y, 2);
            prop_assert_eq!(vm.add(&a, &b), vm.add(&b, &a));
        }

        #[test]
        fn block_sums_match_direct_summation(vals in prop::collection::vec(-5.0f64..5.0, 16)) {
            let mut vm = vm(16);
            let c = CipherVec::encrypt(vals.clone(), 1);
            let s = vm.internal_sum(&c, 4);
            for block in 0..4 {
                let direct: f64 = vals[block * 4..block * 4 + 4].iter().sum();
                prop_assert!((s.slots()[block * 4] - direct).abs() < 1e-12);
            }
            prop_assert_eq!(vm.hoc().total.rot, 2);
        }

        #[test]
        fn pmult_matches_slotwise_product(x in prop::collection::vec(-5.0f64..5.0, 8), w in prop::collection::vec(-5.0f64..5.0, 8)) {
            let mut vm = vm(8);
            let c = CipherVec::encrypt(x.clone(), 1);
            let out = vm.pmult(&c, &w).unwrap();
            for i in 0..8 {
                prop_assert_eq!(out.slots()[i], x[i] * w[i]);
            }
        }
    }
}
