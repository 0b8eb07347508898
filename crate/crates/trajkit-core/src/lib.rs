//! Camera-trajectory verification, repair, windowing and evaluation for
//! pose-annotated video corpora, plus a desk-scale pose-conditioned memory
//! retrieval kernel.
//!
//! The crate is organized around the curation pipeline for SfM-estimated
//! camera trajectories:
//!
//! - [`pose`] — SE(3) primitives: rotations, world-to-camera poses,
//!   trajectories, intrinsics.
//! - [`io`] — parsers/writers for COLMAP text models and the line-delimited
//!   record formats (pair statistics, matches, trajectories, reports).
//! - [`verify`] — the three-stage check pipeline (database, geometric,
//!   kinematic) fused into a per-transition bad-index.
//! - [`repair`] — fix-or-discard policy: run classification, interpolation
//!   and boundary extrapolation, re-validation.
//! - [`window`] — clip extraction, local memory-window sampling, diversity
//!   filtering and query-pose selection.
//! - [`retriever`] — reference forward pass of the pose-conditioned memory
//!   retriever and the memory-conditioned cross-attention injection.
//! - [`metrics`] — relocation AUC, flattened-pose cosine similarity,
//!   reconstruction rate.
//! - [`synth`] — synthetic trajectory/correspondence oracle used by the test
//!   suites and the `simulate` CLI.

pub mod io;
pub mod metrics;
pub mod pose;
pub mod repair;
pub mod retriever;
pub mod synth;
pub mod verify;
pub mod window;

pub use pose::{CameraPose, Intrinsics, Rotation, Trajectory};
