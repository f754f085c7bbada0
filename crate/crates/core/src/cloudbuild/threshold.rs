use super::volume::{Mask, ProbabilityVolume};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Space};

pub const DEFAULT_THETA: f64 = 0.1;

/// Every voxel with probability strictly above `theta` becomes a point at its
/// voxel coordinates, in x-fastest scan order. Points carry the voxel
/// probability.
pub fn threshold_to_cloud(volume: &ProbabilityVolume, theta: f64) -> Result<PointCloud> {
    threshold_to_cloud_capped(volume, theta, None)
}

/// As [`threshold_to_cloud`], failing when more than `max_points` voxels pass.
pub fn threshold_to_cloud_capped(
    volume: &ProbabilityVolume,
    theta: f64,
    max_points: Option<usize>,
) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::Input(format!("threshold {theta} outside [0, 1)")));
    }
    let mut points = Vec::new();
    let mut probs = Vec::new();
    for (i, &q) in volume.values.iter().enumerate() {
        if q > theta {
            let [x, y, z] = volume.header.coords(i);
            points.push([x as f64, y as f64, z as f64]);
            probs.push(q);
            if let Some(cap) = max_points {
                if points.len() > cap {
                    return Err(Error::Config(format!(
                        "more than {cap} voxels exceed threshold {theta}; raise the point cap or the threshold"
                    )));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud {
            theta,
            max_prob: volume.max(),
        });
    }
    PointCloud::new(points, Space::Voxel).with_probs(probs)
}

/// Voxel index of a point that must sit exactly on the grid.
pub(crate) fn voxel_of(p: &[f64; 3], shape: [usize; 3], i: usize) -> Result<[usize; 3]> {
    let mut v = [0usize; 3];
    for a in 0..3 {
        let c = p[a];
        if c.fract() != 0.0 || c < 0.0 || c >= shape[a] as f64 {
            return Err(Error::Input(format!(
                "point {i} at {p:?} is not a voxel inside shape {shape:?}"
            )));
        }
        v[a] = c as usize;
    }
    Ok(v)
}

/// Foreground-labeled points set their voxel; everything else is background.
pub fn cloud_to_volume(cloud: &PointCloud, shape: [usize; 3]) -> Result<Mask> {
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::Input("cloud carries no labels".into()))?;
    let mut mask = Mask::empty(shape);
    for (i, (p, &l)) in cloud.points.iter().zip(labels).enumerate() {
        let [x, y, z] = voxel_of(p, shape, i)?;
        if l == 1 {
            mask.set(x, y, z, true);
        }
    }
    Ok(mask)
}
