//! Spatio-temporal 3D single-object tracking on bird's-eye-view point-cloud
//! features.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`numerics`]: dense f64 tensors with reverse-mode differentiation
//! - [`geometry`]: oriented 3D boxes, rotated IoU, BEV rasterization
//! - [`pillars`]: time-aware point ingestion and the BEV backbone
//! - [`stlm`]: the spatio-temporal learning module (mask fusion, patch
//!   tokens, sparse deformable attention)
//! - [`head`]: center-based target assignment, loss, and box decoding
//! - [`tracker`]: the sliding-window tracking loop
//! - [`eval`]: one-pass-evaluation Success/Precision metrics
//! - [`harness`]: synthetic scenes, configuration, and the toy trainer
//!
//! See `examples/` for one runnable program per capability; the `sttracker`
//! binary wires the same pieces into file-based subcommands.

pub mod eval;
pub mod geometry;
pub mod golden;
pub mod harness;
pub mod head;
pub mod numerics;
pub mod pillars;
pub mod stlm;
pub mod tracker;
