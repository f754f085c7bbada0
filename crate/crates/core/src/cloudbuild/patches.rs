use super::threshold::voxel_of;
use super::volume::StandardizedVolume;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Cubic windows of standardized intensities, one per point.
///
/// Patch `p` occupies `data[p * size³ .. (p + 1) * size³]` with offset
/// `(i, j, k)` along `(x, y, z)` at position `(i * size + j) * size + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub size: usize,
    pub data: Vec<f64>,
}

impl PatchSet {
    pub fn volume(&self) -> usize {
        self.size * self.size * self.size
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.volume()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let v = self.volume();
        &self.data[i * v..(i + 1) * v]
    }

    /// Concatenated patches for the given point indices.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.volume());
        for &i in indices {
            out.extend_from_slice(self.patch(i));
        }
        out
    }
}

/// Extracts the `size³` window centered at every point; voxels outside the
/// volume read as zero.
pub fn extract_patches(volume: &StandardizedVolume, cloud: &PointCloud, size: usize) -> Result<PatchSet> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::Config(format!("patch size {size} must be odd and positive")));
    }
    let shape = volume.header.shape;
    let half = (size / 2) as isize;
    let mut data = Vec::with_capacity(cloud.len() * size * size * size);
    for (i, p) in cloud.points.iter().enumerate() {
        let [cx, cy, cz] = voxel_of(p, shape, i)?;
        for dx in -half..=half {
            let x = cx as isize + dx;
            for dy in -half..=half {
                let y = cy as isize + dy;
                for dz in -half..=half {
                    let z = cz as isize + dz;
                    let inside = x >= 0
                        && y >= 0
                        && z >= 0
                        && (x as usize) < shape[0]
                        && (y as usize) < shape[1]
                        && (z as usize) < shape[2];
                    data.push(if inside {
                        volume.values[volume.header.index(x as usize, y as usize, z as usize)]
                    } else {
                        0.0
                    });
                }
            }
        }
    }
    Ok(PatchSet { size, data })
}
