//! Minimal reverse-mode differentiation and the small network blocks built on it.

pub mod gradcheck;
mod layers;
mod matrix;
mod params;
mod tape;

pub use layers::{ff_forward, glorot_uniform, gru_forward, FeedForward, GruCell, GruOutput, Linear};
pub use matrix::{gemm, Matrix};
pub use params::{AdamConfig, Param, ParamStore};
pub use tape::{Gradients, Tape, Var};

