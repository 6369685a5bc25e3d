//! Node order optimization.
//!
//! Nodes that interact during aggregation are grouped into regions, the
//! regions are interleaved over the ring so that one global rotation moves
//! every region by the same lane distance, and each region is then laid out
//! greedily to avoid rotation conflicts.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph_io::SampledAdjacency;
use crate::packing::SlotLayout;
use crate::spintra::ConflictIndex;

/// Lanes with at most this many free positions are searched exhaustively.
pub const FULL_SEARCH: usize = 1024;
/// Half-width of the candidate window around placed partners on larger lanes.
pub const PLACEMENT_WINDOW: usize = 16;
/// Evenly spaced free positions added to the window on larger lanes.
pub const SPREAD_CANDIDATES: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    regions: Vec<Vec<usize>>,
    th: usize,
}

impl RegionPartition {
    pub fn regions(&self) -> &[Vec<usize>] {
        &self.regions
    }

    pub fn th(&self) -> usize {
        self.th
    }
}

/// Position of every node on the ring, with per-region lanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeOrder {
    ring: usize,
    positions: Vec<usize>,
    /// Ring positions owned by each region, ascending.
    lanes: Vec<Vec<usize>>,
}

impl NodeOrder {
    pub fn identity(num_nodes: usize, ring: usize) -> Result<Self> {
        if num_nodes > ring {
            return Err(Error::Config(format!(
                "{num_nodes} nodes do not fit a ring of {ring} slots"
            )));
        }
        Ok(Self {
            ring,
            positions: (0..num_nodes).collect(),
            lanes: vec![(0..ring).collect()],
        })
    }

    pub fn ring(&self) -> usize {
        self.ring
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn lanes(&self) -> &[Vec<usize>] {
        &self.lanes
    }

    /// Node at each ring position.
    pub fn slots(&self) -> Vec<Option<usize>> {
        let mut s = vec![None; self.ring];
        for (v, &p) in self.positions.iter().enumerate() {
            s[p] = Some(v);
        }
        s
    }

    /// One line per ring position: node id, or `_` for a blank.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in self.slots() {
            match s {
                Some(v) => writeln!(out, "{v}"),
                None => writeln!(out, "_"),
            }
            .expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut slots = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line == "_" {
                slots.push(None);
            } else {
                let v = line.parse::<usize>().map_err(|_| {
                    Error::Config(format!("order line {}: expected node id or `_`", i + 1))
                })?;
                slots.push(Some(v));
            }
        }
        let ring = slots.len();
        let num_nodes = slots.iter().flatten().count();
        let mut positions = vec![usize::MAX; num_nodes];
        for (p, s) in slots.iter().enumerate() {
            if let Some(v) = *s {
                if v >= num_nodes || positions[v] != usize::MAX {
                    return Err(Error::Config(format!(
                        "order is not a permutation: node {v} at position {p}"
                    )));
                }
                positions[v] = p;
            }
        }
        Ok(Self {
            ring,
            positions,
            lanes: vec![(0..ring).collect()],
        })
    }
}

/// Undirected degree in the sampled graph, padding ignored.
pub fn sampled_degrees(adj: &SampledAdjacency) -> Vec<usize> {
    let n = adj.num_nodes();
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for v in 0..n {
        for &u in adj.neighbors(v) {
            if u != v {
                nbrs[v].insert(u);
                nbrs[u].insert(v);
            }
        }
    }
    nbrs.iter().map(BTreeSet::len).collect()
}

/// `G_v = {v} ∪ sampled(v)`; nodes sharing a group are siblings.
fn sibling_groups(adj: &SampledAdjacency) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = adj.num_nodes();
    let mut groups = Vec::with_capacity(n);
    let mut member_of = vec![Vec::new(); n];
    for v in 0..n {
        let g: BTreeSet<usize> = std::iter::once(v)
            .chain(adj.neighbors(v).iter().copied())
            .collect();
        for &u in &g {
            member_of[u].push(v);
        }
        groups.push(g.into_iter().collect());
    }
    (groups, member_of)
}

fn by_degree(degrees: &[usize], nodes: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = nodes.into_iter().collect();
    v.sort_by_key(|&u| (std::cmp::Reverse(degrees[u]), u));
    v
}

pub fn detect_regions(adj: &SampledAdjacency, th: usize) -> Result<RegionPartition> {
    if th == 0 {
        return Err(Error::Config("region cap TH must be at least 1".into()));
    }
    let n = adj.num_nodes();
    let degrees = sampled_degrees(adj);
    let (groups, member_of) = sibling_groups(adj);
    let seeds = by_degree(&degrees, 0..n);
    let mut assigned = vec![false; n];
    let mut regions = Vec::new();
    for &seed in &seeds {
        if assigned[seed] {
            continue;
        }
        let mut region = vec![seed];
        assigned[seed] = true;
        let mut queue = VecDeque::from([seed]);
        'bfs: while let Some(u) = queue.pop_front() {
            for &g in &member_of[u] {
                for &w in &groups[g] {
                    if region.len() >= th {
                        break 'bfs;
                    }
                    if !assigned[w] {
                        assigned[w] = true;
                        region.push(w);
                        queue.push_back(w);
                    }
                }
            }
        }
        regions.push(region);
    }
    Ok(RegionPartition { regions, th })
}

/// Round-robin lanes over the ring. An exhausted region keeps its turn as a
/// blank while blanks remain; afterwards the cycle is rebuilt from the
/// regions that still have nodes. Blanks after the last node are dealt
/// round-robin as well, so the lanes cover the ring.
pub fn interleave(partition: &RegionPartition, ring: usize) -> Result<NodeOrder> {
    let total: usize = partition.regions.iter().map(Vec::len).sum();
    if total > ring {
        return Err(Error::Config(format!(
            "{total} nodes do not fit a ring of {ring} slots"
        )));
    }
    let r = partition.regions.len();
    let mut blanks = ring - total;
    let mut placed = vec![0usize; r];
    let mut lanes = vec![Vec::new(); r];
    let mut positions = vec![usize::MAX; total];
    let mut cycle: Vec<usize> = (0..r).collect();
    let mut turn = 0;
    let mut p = 0;
    let mut remaining = total;
    while remaining > 0 {
        let reg = cycle[turn];
        let region = &partition.regions[reg];
        if placed[reg] < region.len() {
            positions[region[placed[reg]]] = p;
            placed[reg] += 1;
            remaining -= 1;
        } else if blanks > 0 {
            blanks -= 1;
        } else {
            let active = |c: &usize| placed[*c] < partition.regions[*c].len();
            let next = cycle[turn..]
                .iter()
                .chain(&cycle[..turn])
                .copied()
                .find(|c| active(c))
                .expect("nodes remain");
            cycle.retain(active);
            turn = cycle
                .iter()
                .position(|&c| c == next)
                .expect("active region");
            continue;
        }
        lanes[reg].push(p);
        p += 1;
        turn = (turn + 1) % cycle.len();
    }
    // Trailing blanks keep rotating through the cycle.
    if !cycle.is_empty() {
        for q in p..ring {
            lanes[cycle[turn]].push(q);
            turn = (turn + 1) % cycle.len();
        }
    }
    Ok(NodeOrder {
        ring,
        positions,
        lanes,
    })
}

struct RegionPlacer<'a> {
    adj: &'a SampledAdjacency,
    /// `incoming[u]` = `(v, k)` with `u = neighbors[v][k]`, `u != v`.
    incoming: &'a [Vec<(usize, usize)>],
    lane_of: Vec<Option<usize>>,
    index: ConflictIndex,
    len: usize,
}

impl RegionPlacer<'_> {
    /// Tokens between `x` at lane index `i` and already placed partners, as
    /// `(stream, source, source lane index, shift)`.
    fn for_tokens(&self, x: usize, i: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        for (k, &u) in self.adj.neighbors(x).iter().enumerate() {
            if u == x {
                continue;
            }
            if let Some(j) = self.lane_of[u] {
                f(k, u, j, (j + self.len - i) % self.len);
            }
        }
        for &(v, k) in &self.incoming[x] {
            if let Some(j) = self.lane_of[v] {
                f(k, x, i, (i + self.len - j) % self.len);
            }
        }
    }

    fn conflicts(&self, x: usize, i: usize) -> u64 {
        let mut total = 0;
        self.for_tokens(x, i, |k, src, at, shift| {
            total += self.index.conflicts(k, src, at, shift);
        });
        total
    }

    fn place(&mut self, x: usize, i: usize) {
        let mut tokens = Vec::new();
        self.for_tokens(x, i, |k, src, at, shift| tokens.push((k, src, at, shift)));
        for (k, src, at, shift) in tokens {
            self.index.insert(k, src, at, shift);
        }
        self.lane_of[x] = Some(i);
    }

    fn candidates(&self, x: usize, free: &BTreeSet<usize>) -> Vec<usize> {
        if free.len() <= FULL_SEARCH {
            return free.iter().copied().collect();
        }
        let mut c: BTreeSet<usize> = BTreeSet::new();
        let step = free.len() / SPREAD_CANDIDATES;
        c.extend(free.iter().step_by(step.max(1)).copied());
        let partners = self
            .adj
            .neighbors(x)
            .iter()
            .copied()
            .chain(self.incoming[x].iter().map(|&(v, _)| v));
        for u in partners {
            if let Some(j) = self.lane_of[u] {
                for off in 1..=PLACEMENT_WINDOW {
                    for at in [
                        (j + off) % self.len,
                        (j + self.len - off % self.len) % self.len,
                    ] {
                        if free.contains(&at) {
                            c.insert(at);
                        }
                    }
                }
            }
        }
        c.into_iter().collect()
    }
}

fn incoming_lists(adj: &SampledAdjacency) -> Vec<Vec<(usize, usize)>> {
    let mut incoming = vec![Vec::new(); adj.num_nodes()];
    for v in 0..adj.num_nodes() {
        for (k, &u) in adj.neighbors(v).iter().enumerate() {
            if u != v {
                incoming[u].push((v, k));
            }
        }
    }
    incoming
}

/// Region-local BFS order over siblings, starting at the highest-degree node.
fn placement_order(
    region: &[usize],
    degrees: &[usize],
    groups: &[Vec<usize>],
    member_of: &[Vec<usize>],
    in_region: &[bool],
) -> Vec<usize> {
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut order = Vec::with_capacity(region.len());
    for seed in by_degree(degrees, region.iter().copied()) {
        if !seen.insert(seed) {
            continue;
        }
        order.push(seed);
        let mut queue = VecDeque::from([seed]);
        while let Some(u) = queue.pop_front() {
            for &g in &member_of[u] {
                for &w in &groups[g] {
                    if in_region[w] && seen.insert(w) {
                        order.push(w);
                        queue.push_back(w);
                    }
                }
            }
        }
    }
    order
}

/// Greedy conflict-minimizing placement inside every region's lane.
///
/// Each node goes to the free lane index with the fewest simulated conflicts
/// against the nodes placed before it, ties to the smallest index. Lanes with
/// more than [`FULL_SEARCH`] free positions only evaluate a window around
/// placed partners plus an even spread of free positions.
pub fn greedy_place(
    partition: &RegionPartition,
    adj: &SampledAdjacency,
    skeleton: &NodeOrder,
) -> NodeOrder {
    let n = adj.num_nodes();
    let degrees = sampled_degrees(adj);
    let (groups, member_of) = sibling_groups(adj);
    let incoming = incoming_lists(adj);
    let mut positions = skeleton.positions.clone();
    for (r, region) in partition.regions.iter().enumerate() {
        let lane = &skeleton.lanes[r];
        let len = lane.len();
        let mut in_region = vec![false; n];
        for &v in region {
            in_region[v] = true;
        }
        let order = placement_order(region, &degrees, &groups, &member_of, &in_region);
        let mut placer = RegionPlacer {
            adj,
            incoming: &incoming,
            lane_of: vec![None; n],
            index: ConflictIndex::new(len, adj.n()),
            len,
        };
        let mut free: BTreeSet<usize> = (0..len).collect();
        for x in order {
            let best = placer
                .candidates(x, &free)
                .into_iter()
                .min_by_key(|&i| (placer.conflicts(x, i), i))
                .expect("region fits its lane");
            free.remove(&best);
            placer.place(x, best);
            positions[x] = lane[best];
        }
    }
    NodeOrder {
        ring: skeleton.ring,
        positions,
        lanes: skeleton.lanes.clone(),
    }
}

/// Total simulated conflicts of an order, counted per region lane.
pub fn simulated_conflicts(
    partition: &RegionPartition,
    adj: &SampledAdjacency,
    order: &NodeOrder,
) -> u64 {
    let n = adj.num_nodes();
    let slots = order.slots();
    let mut total = 0;
    for (r, region) in partition.regions.iter().enumerate() {
        let lane = &order.lanes[r];
        let len = lane.len();
        let mut lane_of = vec![None; n];
        for (i, &p) in lane.iter().enumerate() {
            if let Some(v) = slots[p] {
                lane_of[v] = Some(i);
            }
        }
        let mut index = ConflictIndex::new(len, adj.n());
        for &v in region {
            let Some(i) = lane_of[v] else { continue };
            for (k, &u) in adj.neighbors(v).iter().enumerate() {
                if u == v {
                    continue;
                }
                if let Some(j) = lane_of[u] {
                    let shift = (j + len - i) % len;
                    total += index.conflicts(k, u, j, shift);
                    index.insert(k, u, j, shift);
                }
            }
        }
    }
    total
}

/// Region detection, interleaving and greedy placement.
pub fn run_noo(adj: &SampledAdjacency, ring: usize, th: usize) -> Result<NodeOrder> {
    let partition = detect_regions(adj, th)?;
    let skeleton = interleave(&partition, ring)?;
    Ok(greedy_place(&partition, adj, &skeleton))
}

/// The client packs the first layer directly in the optimized order.
pub fn order_backprop(
    order: &NodeOrder,
    slots: usize,
    t: usize,
    num_features: usize,
) -> Result<SlotLayout> {
    if slots / t != order.ring {
        return Err(Error::Config(format!(
            "order built for ring {} but packing uses ring {}",
            order.ring,
            slots / t
        )));
    }
    SlotLayout::new(slots, t, num_features, order.positions.clone())
}
