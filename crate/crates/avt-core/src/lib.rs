//! Core algorithms for diffusion-based data sanitization.
//!
//! This crate is `no_std` + `alloc`: everything here is pure computation on
//! in-memory buffers. File formats, the CLI, and parallel orchestration live
//! in the companion `avt-cli` crate.
//!
//! The pieces fit together like this: a [`schedule::DiffusionSchedule`]
//! defines the forward corruption chain; [`diffusion`] runs the forward and
//! reverse processes against any [`diffusion::ScoreFunction`];
//! [`oracle`] provides closed-form scores for Gaussian-mixture data so the
//! reverse process and the contraction bounds in [`bounds`] can be verified
//! without a trained network; [`score_model`] trains a small noise-prediction
//! MLP when an oracle is not available; [`select`] picks the noise timestep;
//! [`poison`] closes the loop with synthetic availability attacks and a small
//! classifier.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod diffusion;
pub mod error;
mod math;
mod nn;
pub mod oracle;
pub mod poison;
pub mod rng;
pub mod schedule;
pub mod score_model;
pub mod select;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use schedule::DiffusionSchedule;
pub use tensor::Tensor;
