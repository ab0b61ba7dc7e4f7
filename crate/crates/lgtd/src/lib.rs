//! Local-Global Temporal Difference (LGTD) video super-resolution.
//!
//! A window of `2N+1` low-resolution frames is compensated along two routes
//! and fused into a single super-resolved center frame:
//!
//! - a short-term route that encodes RGB difference maps between adjacent
//!   frames into a local motion representation ([`model::stdm`]),
//! - a long-term route that coarsely aligns all frames with deformable
//!   convolutions, smooths the forward and backward orderings, and turns
//!   their cross-difference into sigmoid activation maps that modulate the
//!   global feature ([`model::align`], [`model::ltdm`]).
//!
//! Both routes are reconciled with the target frame's own spatial feature by
//! difference compensation units ([`model::dcu`]) and decoded by a hybrid
//! attention reconstruction head with sub-pixel upsampling
//! ([`model::recon`]).
//!
//! Everything runs on the CPU in `f64` with hand-written backward passes, so
//! every operation can be checked against central finite differences
//! ([`train::gradcheck`]). Training, evaluation, synthetic data generation,
//! ablations, and model statistics are exposed both as a library and through
//! the `lgtd` binary.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod train;

pub use error::{Error, Result};
