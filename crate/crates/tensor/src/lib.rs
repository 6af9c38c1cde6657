//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! A [`Tape`] records forward ops on [`Var`] handles; [`Tape::backward`]
//! replays them in reverse. Parameters live outside the tape as [`Tensor`]s
//! and are copied in with [`Tape::param`] for each forward pass.

pub mod error;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use optim::Adam;
pub use tape::{matmul_nt, BatchNormStats, Tape, Var};
pub use tensor::Tensor;

/// Negative-side slope used for every leaky ReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.2;
