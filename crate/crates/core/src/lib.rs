//! Multi-view spatial-attention networks with a saliency localisation
//! validation suite.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`graph`]: a minimal dense-tensor kernel with reverse-mode
//!   automatic differentiation on an append-only tape.
//! - [`attention`]: the spatial attention block (1x1 conv, per-map softmax,
//!   per-map max normalisation, element-wise reweighting).
//! - [`model`]: slice backbones, the single-plane classifier, and the three
//!   multi-plane fusion strategies, plus training and checkpointing.
//! - [`saliency`]: Grad-Cam maps and binary masks derived from them.
//! - [`metrics`]: localisation accuracy, false-positive penalisation and
//!   related scores, ranking AUC, and their aggregation.
//! - [`io`]: the grid file format, annotation JSON, and a synthetic volume
//!   generator for end-to-end validation.
//! - [`cli`]: the batch front end behind the `locvalid` binary.
//!
//! Every run is deterministic given its seed; see the `examples/` directory
//! for end-to-end usage.

pub mod attention;
pub mod cli;
pub mod error;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod saliency;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
