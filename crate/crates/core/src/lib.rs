//! Graph-convolutional matrix completion on bipartite user/item rating
//! graphs, with optional temporal aggregation of a sequence of graph
//! snapshots through a GRU or LSTM layer.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! checkpoints and the command line live in the companion `gcmc` crate.
//!
//! Layout:
//!
//! - [`tensor`] and [`tape`]: dense 64-bit tensors and a reverse-mode tape.
//! - [`dataset`]: dense id remapping and chronological splits.
//! - [`graph`]: time-ordered edge chunking, snapshot sequences, per-level
//!   adjacency with normalization constants.
//! - [`model`]: encoder, recurrent cells, bilinear decoder, expected rating.
//! - [`train`]: Adam, parameter EMA and the full-batch training loop.
//! - [`eval`]: RMSE and report tables.
//! - [`gradcheck`]: finite-difference validation of model gradients.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
