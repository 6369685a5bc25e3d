//! Intra-ciphertext aggregation by bit-serial rotation.
//!
//! Every (target, neighbor index) pair becomes a [`Token`] that has to travel
//! `shift` slots to the left inside the node ring. Tokens of one neighbor
//! index form a stream; a stream starts from the packed input and moves its
//! tokens one power of two at a time, lowest bit first.

mod aoo;
mod conflict;
mod exec;
mod schedule;

pub use aoo::{aoo_assign, union_cost};
pub use conflict::ConflictIndex;
pub use exec::{exec_spintra, DeliveryMode, SpintraOutput};
pub use schedule::{
    build_schedule, cpoo_optimize, Op, RotationSchedule, ScheduleOptions, ScheduleStats, Step,
};

use crate::error::{Error, Result};
use crate::graph_io::SampledAdjacency;
use crate::packing::SlotLayout;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Token {
    pub source: usize,
    pub target: usize,
    pub output: usize,
    /// Left shift inside the ring, `(pos(source) - pos(target)) mod ring`.
    pub shift: usize,
    pub weight: f64,
}

/// One token per `(v, k)`, ordered by target then neighbor index.
pub fn compute_shifts(adj: &SampledAdjacency, layout: &SlotLayout) -> Result<Vec<Token>> {
    if adj.num_nodes() != layout.num_nodes() {
        return Err(Error::Dimension(format!(
            "layout holds {} nodes, adjacency {}",
            layout.num_nodes(),
            adj.num_nodes()
        )));
    }
    if !layout.fits_ring() {
        return Err(Error::Unsupported(format!(
            "intra-ciphertext aggregation needs all {} nodes inside one ring of {} slots",
            layout.num_nodes(),
            layout.ring()
        )));
    }
    let ring = layout.ring();
    let mut tokens = Vec::with_capacity(adj.num_nodes() * adj.n());
    for v in 0..adj.num_nodes() {
        let pv = layout.node_position(v);
        for (k, (&u, &w)) in adj.neighbors(v).iter().zip(adj.weights(v)).enumerate() {
            let pu = layout.node_position(u);
            tokens.push(Token {
                source: u,
                target: v,
                output: k,
                shift: (pu + ring - pv) % ring,
                weight: w,
            });
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::{sample_neighbors, synthetic, AggregationRule};

    #[test]
    fn shift_is_left_distance() {
        let adj = SampledAdjacency::from_parts(
            AggregationRule::Mean,
            vec![vec![1], vec![0]],
            vec![vec![0.5], vec![0.5]],
            vec![0.5, 0.5],
        )
        .unwrap();
        let layout = SlotLayout::new(8, 1, 1, vec![1, 6]).unwrap();
        let tokens = compute_shifts(&adj, &layout).unwrap();
        assert_eq!(tokens[0].shift, 5);
        assert_eq!(tokens[1].shift, 3);
    }

    #[test]
    fn ring_successor_has_unit_shift() {
        let g = synthetic::ring(16);
        let adj = SampledAdjacency::from_parts(
            AggregationRule::Mean,
            (0..16).map(|v| vec![(v + 1) % 16]).collect(),
            vec![vec![0.5]; 16],
            vec![0.5; 16],
        )
        .unwrap();
        assert_eq!(g.num_nodes(), 16);
        let layout = SlotLayout::identity(16, 1, 16, 1).unwrap();
        let tokens = compute_shifts(&adj, &layout).unwrap();
        assert!(tokens.iter().all(|t| t.shift == 1));
    }

    #[test]
    fn shifts_live_in_sub_ring() {
        let g = synthetic::random(12, 3.0, 1);
        let adj = sample_neighbors(&g, 2, 1).unwrap();
        let layout = SlotLayout::identity(64, 4, 12, 4).unwrap();
        let tokens = compute_shifts(&adj, &layout).unwrap();
        assert_eq!(tokens.len(), 24);
        assert!(tokens.iter().all(|t| t.shift < 16));
    }

    #[test]
    fn rejects_row_blocks() {
        let g = synthetic::path(10);
        let adj = sample_neighbors(&g, 1, 0).unwrap();
        let layout = SlotLayout::identity(8, 1, 10, 1).unwrap();
        assert!(matches!(
            compute_shifts(&adj, &layout),
            Err(Error::Unsupported(_))
        ));
    }
}
