//! Noise-injected spiking graph convolutional networks for point cloud denoising.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors, a define-by-run gradient tape and Adam.
//! - [`neuron`]: IF/LIF neurons and their noise-injected variants.
//! - [`graph`]: kNN graphs, spiking edge convolution and dense blocks.
//! - [`model`]: feature extractor, pure and hybrid score heads, checkpoints.
//! - [`train`] and [`denoise`]: the training loop and score-based inference.
//! - [`metrics`], [`energy`] and [`io`]: evaluation, operation counting and file formats.

// `!(x <= y)` is used deliberately so NaN falls into the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod denoise;
pub mod energy;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod neuron;
pub mod patch;
pub mod spatial;
pub mod train;

pub use error::{CheckpointError, Error, Result};
