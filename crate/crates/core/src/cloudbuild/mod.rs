//! From probability volume to point cloud and per-point patches.

mod patches;
mod threshold;
mod volume;

pub use patches::{extract_patches, PatchSet};
pub use threshold::{cloud_to_volume, threshold_to_cloud, threshold_to_cloud_capped, DEFAULT_THETA};
pub use volume::{read_volume_file, write_volume_file, Mask, ProbabilityVolume, StandardizedVolume, VolumeHeader};
