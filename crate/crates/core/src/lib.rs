//! Explaining single moves of a mini-Go value network.
//!
//! The crate trains a small residual value network on self-play data, distills
//! it into lattice-local student networks mixed by a gating network, and
//! explains a move by (a) scoring which lattice carries the move's effect and
//! (b) propagating masked output contributions back to the stones.

pub mod collab;
pub mod config;
pub mod contribution;
pub mod distill;
pub mod error;
pub mod eval;
pub mod goenv;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
