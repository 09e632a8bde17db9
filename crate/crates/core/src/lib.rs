//! Magnification-flexible point cloud upsampling.
//!
//! A sparse cloud is upsampled by any integer factor `R <= R_max` with a single
//! trained model. Each new point is an affine combination of the K nearest
//! input points (learned, simplex-constrained weights) plus a learned
//! correction predicted by a self-attention refinement stage.
//!
//! The crate is organized bottom-up:
//!
//! - [`cloud`], [`spatial`], [`patch`], [`xyz`]: point containers, KNN / FPS, patch pipeline, text I/O
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` tensors, Adam, gradcheck, checkpoints
//! - [`net`]: the upsampling network
//! - [`losses`]: Chamfer, projection and uniform losses
//! - [`metrics`]: CD, HD, JSD, P2F and NUC
//! - [`synth`]: analytic surfaces and training pairs
//! - [`train`], [`pipeline`], [`config`]: training loop, whole-cloud inference and evaluation

pub mod autodiff;
pub mod cloud;
pub mod config;
mod error;
pub mod losses;
pub mod metrics;
pub mod net;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod patch;
pub mod pipeline;
pub mod spatial;
pub mod synth;
pub mod train;
pub mod xyz;

pub use error::{Error, Result};

/// A point in model coordinates.
pub type Point3 = [f64; 3];

#[inline]
pub(crate) fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
