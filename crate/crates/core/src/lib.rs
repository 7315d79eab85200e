//! CSI laboratory for axis-decoupled rotary positional encodings.
//!
//! The pieces, bottom-up:
//!
//! * [`channel`] / [`dataset`]: synthetic sum-of-paths CSI and the `CSI3D1`
//!   file format.
//! * [`coherence`]: per-axis autocorrelation profiles and coherence extents,
//!   with [`bessel`] for the Clarke reference curve.
//! * [`tokenizer`]: 3D patch tokens with explicit coordinates and the three
//!   masking patterns.
//! * [`posenc`]: APE tables, fixed/learnable/adaptive 3D rotary banks, the
//!   channel-conditioned controller and the head-wise phase probe.
//! * [`model`], [`train`], [`metrics`], [`checkpoint`]: a masked
//!   encoder–decoder, its AdamW training loop, NMSE evaluation and the
//!   `R3DCKPT1` checkpoint format.

pub mod bessel;
pub mod checkpoint;
pub mod channel;
pub mod coherence;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod posenc;
pub mod seed;
pub mod study;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
