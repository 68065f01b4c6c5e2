//! Physics-informed neural networks for reconstructing unsteady flow fields
//! (velocity and latent pressure) from sparse space-time samples.
//!
//! Modules, bottom-up:
//!
//! - [`diffengine`]: reverse-mode tape with second-order input jets
//! - [`mlp`]: the feed-forward network, initialization and checkpoints
//! - [`optim`]: Adam, learning-rate staging, mini-batching
//! - [`physics`]: Navier-Stokes and RANS residual operators
//! - [`loss`]: composite losses and the fixed / relaxed / adaptive weightings
//! - [`datagen`]: manufactured flows, sparse sampling, time splits, CSV I/O
//! - [`trainers`]: data-driven, standard PINN and segmented (BC-PINN) training
//! - [`eval`]: relative L2 evaluation and gradient histograms
//! - [`config`] / [`cli`]: experiment files and the command-line driver

// `!(x > 0.0)` checks are written that way on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod datagen;
pub mod diffengine;
pub mod error;
pub mod eval;
pub mod io_util;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod physics;
pub mod trainers;

pub use error::{Error, Result};
