//! X-Conv encoder-decoder with a 3-D patch feature extractor.

mod layers;
mod model;
mod plan;
mod spec;

pub use layers::{FeatureExtractor, XConv, XConvLayer};
pub use model::{BatchInput, ForwardOutput, Network};
pub use plan::{plan_stage, StagePlan};
pub use spec::{NetworkSpec, XConvLayerSpec, FEATURE_CHANNELS};
