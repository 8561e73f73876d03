//! Iterative error feedback for 2D keypoint estimation.
//!
//! A predictor looks at the image stacked with Gaussian renderings of its
//! current keypoint estimate and outputs a bounded correction; applying the
//! correction and repeating refines the estimate. Training follows fixed path
//! consolidation: per-image correction paths from a mean pose to the ground
//! truth are precomputed, and later steps join the training set only after
//! earlier ones have been consolidated.

pub mod check;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod net;
pub mod parallel;
pub mod pose;
pub mod render;
pub mod rng;
pub mod svg;
pub mod train;

pub use error::{Error, Result};
pub use pose::{Correction, FixedPath, Point, Pose};
