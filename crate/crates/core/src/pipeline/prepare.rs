use crate::cloudbuild::{extract_patches, threshold_to_cloud_capped, PatchSet, ProbabilityVolume};
use crate::error::Result;
use crate::geometry::{normalize_unit_cube, Point, PointCloud};
use crate::network::BatchInput;

/// Everything about a case that stays fixed across epochs and repetitions.
#[derive(Clone, Debug)]
pub struct PreparedCase {
    /// Thresholded cloud in voxel coordinates.
    pub cloud: PointCloud,
    /// The same points mapped into the unit cube.
    pub normalized: PointCloud,
    pub patches: PatchSet,
}

pub fn prepare_case(
    volume: &ProbabilityVolume,
    theta: f64,
    patch_size: usize,
    max_points: Option<usize>,
) -> Result<PreparedCase> {
    let cloud = threshold_to_cloud_capped(volume, theta, max_points)?;
    let (normalized, _) = normalize_unit_cube(&cloud)?;
    let patches = extract_patches(&volume.standardize(), &cloud, patch_size)?;
    Ok(PreparedCase {
        cloud,
        normalized,
        patches,
    })
}

impl PreparedCase {
    /// Stacks subclouds (with their own, possibly augmented, coordinates)
    /// and the patches of the points they were drawn from.
    pub(crate) fn batch(&self, subclouds: &[PointCloud]) -> BatchInput {
        let mut points: Vec<Vec<Point>> = Vec::with_capacity(subclouds.len());
        let mut patches = Vec::new();
        for s in subclouds {
            points.push(s.points.clone());
            patches.extend(self.patches.gather(s.source_indices.as_deref().unwrap_or(&[])));
        }
        BatchInput { points, patches }
    }
}
