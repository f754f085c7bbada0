//! Refinement of volumetric segmentations through point-wise classification.
//!
//! A probability map is thresholded into a sparse point cloud, each point is
//! enriched with a 5×5×5 patch of standardized probabilities, and an X-Conv
//! encoder-decoder classifies every point as foreground or background. The
//! labeled cloud is mapped back onto the voxel grid as the refined mask.
//!
//! Module map:
//!
//! - [`numeric`]: arrays, define-by-run reverse-mode differentiation, Adam,
//!   checkpoints.
//! - [`geometry`]: farthest point sampling, dilated k-NN, normalization,
//!   augmentation, subcloud extraction.
//! - [`cloudbuild`]: probability volumes, thresholding, standardization,
//!   patch extraction.
//! - [`network`]: the X-Conv operator, patch feature extractor and the full
//!   segmentation network.
//! - [`pipeline`]: training and majority-vote inference.
//! - [`evalsynth`]: Dice / HD95 / VS metrics, synthetic nerve generation and
//!   the shape-sensitivity experiments.
//! - [`cli`]: the `pointrefine` command line.

pub mod cli;
pub mod cloudbuild;
pub mod error;
pub mod evalsynth;
pub mod geometry;
pub mod network;
pub mod numeric;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
