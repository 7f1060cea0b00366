//! Boundary-distance regression and pixelwise classification for 2D shape
//! segmentation.
//!
//! Masks are encoded as exponentially decaying boundary-distance maps, a
//! small convolutional network regresses those maps from images, and a
//! second network classifies pixels from the predicted maps. The crate also
//! carries the classical post-processing path (thinning, spanning tree,
//! polygon fill), thin-plate-spline data augmentation, evaluation metrics
//! and a synthetic data generator.

pub mod contour;
pub mod distance_map;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod raster;
pub mod synth;
pub mod tps;

pub use error::{Error, Result};
