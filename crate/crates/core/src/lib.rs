//! Continual-learning multi-agent trajectory prediction.
//!
//! A variational trajectory model whose context posterior is regularized
//! against a continually grown mixture-of-Gaussians prior, trained task by
//! task with alternating prior/model updates and evaluated for accuracy and
//! forgetting.
//!
//! Module map:
//!
//! - [`gaussian`]: diagonal Gaussians, mixtures, closed-form and Monte-Carlo divergences.
//! - [`nn`]: reverse-mode tape, parameter store, feed-forward and GRU blocks, Adam.
//! - [`data`]: synthetic circle-crossing scenes, text trajectory files, windowing.
//! - [`model`]: the trajectory/context encoders, posterior fusion, decoders and losses.
//! - [`memory`]: the prior queue of pseudo-trajectory components.
//! - [`engine`]: task-sequential training, schedules, checkpoints.
//! - [`eval`]: ADE/FDE, best-of-k, forgetting, latent export.
//! - [`cli`]: the command-line driver behind the `continual-traj` binary.

pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod memory;
pub mod model;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
