//! Segmentation metrics, synthetic phantoms and the sensitivity experiments.

mod corpus;
mod experiments;
mod metrics;
mod report;
mod synth;

pub use corpus::{generate_corpus, CorpusCase, CorpusRanges};
pub use experiments::*;
pub use metrics::{dice, hausdorff, hd95, nearest_rank, surface_voxels, volumetric_similarity};
pub use report::SegmentationReport;
pub use synth::{
    gaussian_smooth, generate_nerve, generate_with_extras, rasterize_disk, FalsePositive, NerveKind, SyntheticCase,
    SyntheticSpec,
};
