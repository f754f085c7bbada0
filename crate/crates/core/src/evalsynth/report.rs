use serde::{Deserialize, Serialize};

use super::metrics::{dice, hausdorff, hd95, volumetric_similarity};
use crate::cloudbuild::Mask;
use crate::error::{Error, Result};

/// Agreement between a segmentation and the ground truth. Surface distances
/// are `None` when either mask is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub dice: f64,
    pub hd95_mm: Option<f64>,
    pub hd_mm: Option<f64>,
    pub vs: f64,
    /// Foreground fraction of all voxels in the ground truth.
    pub voxel_class_ratio: f64,
    /// Foreground fraction of the thresholded point cloud.
    pub cloud_class_ratio: f64,
}

impl SegmentationReport {
    pub fn compare(segmentation: &Mask, truth: &Mask, spacing: [f64; 3], cloud_class_ratio: f64) -> Result<Self> {
        let surface = |f: fn(&Mask, &Mask, [f64; 3]) -> Result<f64>| match f(segmentation, truth, spacing) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            dice: dice(segmentation, truth)?,
            hd95_mm: surface(hd95)?,
            hd_mm: surface(hausdorff)?,
            vs: volumetric_similarity(segmentation, truth)?,
            voxel_class_ratio: truth.count() as f64 / truth.values.len().max(1) as f64,
            cloud_class_ratio,
        })
    }
}
