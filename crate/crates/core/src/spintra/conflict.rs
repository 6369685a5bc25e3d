use std::collections::HashMap;

/// Position of a token after bit step `m` (its low `m+1` shift bits applied).
fn position_after(source_pos: usize, shift: usize, m: u32, ring: usize) -> usize {
    let done = shift & ((2usize << m) - 1);
    (source_pos + ring - done % ring) % ring
}

/// Conflict bookkeeping for a set of planned tokens, one bucket per
/// `(stream, bit)`. A conflict is a token that moves at bit `m` landing on a
/// slot that a token from a different source keeps through the same bit.
///
/// This ignores evictions, so it estimates rather than replays the planner.
#[derive(Debug, Clone)]
pub struct ConflictIndex {
    ring: usize,
    bits: u32,
    buckets: Vec<HashMap<usize, Vec<(usize, bool)>>>,
}

impl ConflictIndex {
    pub fn new(ring: usize, streams: usize) -> Self {
        let bits = ring.next_power_of_two().trailing_zeros();
        Self {
            ring,
            bits,
            buckets: vec![HashMap::new(); streams * bits as usize],
        }
    }

    pub fn ring(&self) -> usize {
        self.ring
    }

    fn live_steps(&self, shift: usize) -> impl Iterator<Item = u32> {
        (0..self.bits).take_while(move |&m| shift >> m != 0)
    }

    pub fn insert(&mut self, stream: usize, source: usize, source_pos: usize, shift: usize) {
        for m in self.live_steps(shift) {
            let moving = shift >> m & 1 == 1;
            let at = position_after(source_pos, shift, m, self.ring);
            self.buckets[stream * self.bits as usize + m as usize]
                .entry(at)
                .or_default()
                .push((source, moving));
        }
    }

    /// Conflicts the token would have with everything inserted so far.
    pub fn conflicts(&self, stream: usize, source: usize, source_pos: usize, shift: usize) -> u64 {
        let mut total = 0;
        for m in self.live_steps(shift) {
            let moving = shift >> m & 1 == 1;
            let at = position_after(source_pos, shift, m, self.ring);
            if let Some(entries) = self.buckets[stream * self.bits as usize + m as usize].get(&at) {
                total += entries
                    .iter()
                    .filter(|&&(s, mv)| s != source && mv != moving)
                    .count() as u64;
            }
        }
        total
    }
}
