//! File formats and the synthetic dataset generator.
//!
//! - [`grid`]: the `.sgrd` binary grid format used for volumes, saliency
//!   maps, masks, and checkpoint parameter blobs.
//! - [`annotations`]: the `.ann.json` bounding-box annotation document.
//! - [`synth`]: a planted-lesion volume generator providing exact ground
//!   truth for end-to-end validation.

pub mod annotations;
pub mod grid;
pub mod synth;
