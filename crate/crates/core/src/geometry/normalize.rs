use serde::{Deserialize, Serialize};

use super::{PointCloud, Point, Space};
use crate::error::{Error, Result};

/// Isotropic map `p -> (p - center) / scale` into `[-1, 1]^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCubeAffine {
    pub center: Point,
    pub scale: f64,
}

impl UnitCubeAffine {
    pub fn apply(&self, p: &Point) -> Point {
        [0, 1, 2].map(|a| ((p[a] - self.center[a]) / self.scale).clamp(-1.0, 1.0))
    }

    pub fn invert(&self, p: &Point) -> Point {
        [0, 1, 2].map(|a| p[a] * self.scale + self.center[a])
    }
}

/// Centers the bounding box at the origin and divides by the largest
/// half-extent over the three axes, preserving aspect ratio. A cloud with no
/// extent uses scale 1.
pub fn normalize_unit_cube(cloud: &PointCloud) -> Result<(PointCloud, UnitCubeAffine)> {
    if cloud.is_empty() {
        return Err(Error::Input("cannot normalize an empty cloud".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &cloud.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
    let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max);
    let affine = UnitCubeAffine {
        center,
        scale: if half > 0.0 { half } else { 1.0 },
    };
    let mut out = cloud.clone();
    out.points = cloud.points.iter().map(|p| affine.apply(p)).collect();
    out.space = Space::UnitCube;
    Ok((out, affine))
}
