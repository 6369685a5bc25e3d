//! Scheduling and exact slot-level simulation of homomorphic GCN inference.
//!
//! Ciphertexts are modelled as vectors of real-valued SIMD slots. Every
//! schedule produced here (column packing, inter-ciphertext aggregation,
//! bit-serial intra-ciphertext aggregation, node reordering) is executed on
//! that model and can be checked against a dense plaintext forward pass.

pub mod cli;
pub mod error;
pub mod graph_io;
pub mod interca;
pub mod matrix;
pub mod noo;
pub mod packing;
pub mod pipeline;
pub mod report;
pub mod slotvm;
pub mod spintra;

pub use error::{Error, Result};
pub use matrix::Matrix;
