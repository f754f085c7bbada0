use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Point, PointCloud, Space};
use crate::seed;

pub type Rotation = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    /// Uniform over SO(3).
    #[default]
    Full,
    /// Uniform angle about the z axis only.
    ZAxis,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation: RotationMode,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: RotationMode::Full,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

/// Rotation matrix of a random rotation. Full rotations come from a uniformly
/// sampled unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R, mode: RotationMode) -> Rotation {
    match mode {
        RotationMode::None => [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        RotationMode::ZAxis => {
            let (s, c) = (TAU * rng.random::<f64>()).sin_cos();
            [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
        }
        RotationMode::Full => {
            let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let a = (1.0 - u1).sqrt();
            let b = u1.sqrt();
            let (x, y) = (a * (TAU * u2).sin(), a * (TAU * u2).cos());
            let (z, w) = (b * (TAU * u3).sin(), b * (TAU * u3).cos());
            [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
                [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
                [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
            ]
        }
    }
}

pub fn rotate(points: &[Point], r: &Rotation) -> Vec<Point> {
    points
        .iter()
        .map(|p| [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]))
        .collect()
}

/// One random rotation about the origin followed by clipped Gaussian jitter.
///
/// If the result leaves `[-1, 1]^3` the whole cloud is shrunk uniformly back
/// inside, so the output stays a valid unit-cube cloud.
pub fn augment(cloud: &PointCloud, seed: u64, config: &AugmentConfig) -> PointCloud {
    let mut rng = seed::rng(seed);
    let r = random_rotation(&mut rng, config.rotation);
    let mut points = rotate(&cloud.points, &r);
    if config.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, config.jitter_sigma).expect("positive sigma");
        for p in &mut points {
            for c in p.iter_mut() {
                *c += normal.sample(&mut rng).clamp(-config.jitter_clip, config.jitter_clip);
            }
        }
    }
    let extent = points.iter().flatten().fold(1.0_f64, |m, c| m.max(c.abs()));
    if extent > 1.0 {
        for c in points.iter_mut().flatten() {
            *c = (*c / extent).clamp(-1.0, 1.0);
        }
    }
    PointCloud {
        points,
        space: Space::UnitCube,
        ..cloud.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(r: &Rotation) -> f64 {
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    #[test]
    fn rotations_are_proper_and_orthonormal() {
        let mut rng = seed::rng(4);
        for mode in [RotationMode::Full, RotationMode::ZAxis] {
            for _ in 0..50 {
                let r = random_rotation(&mut rng, mode);
                assert!((det(&r) - 1.0).abs() < 1e-12);
                for i in 0..3 {
                    for j in 0..3 {
                        let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((dot - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn identity_without_jitter_is_noop() {
        let cloud = PointCloud::new(vec![[0.1, -0.5, 0.9], [-1.0, 1.0, 0.0]], Space::UnitCube);
        let cfg = AugmentConfig {
            rotation: RotationMode::None,
            jitter_sigma: 0.0,
            jitter_clip: 0.05,
        };
        assert_eq!(augment(&cloud, 9, &cfg), cloud);
    }

    #[test]
    fn jitter_is_clipped() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 200], Space::UnitCube);
        let cfg = AugmentConfig {
            rotation: RotationMode::None,
            jitter_sigma: 1.0,
            jitter_clip: 0.05,
        };
        let out = augment(&cloud, 1, &cfg);
        assert!(out.points.iter().flatten().all(|c| c.abs() <= 0.05));
    }
}
