//! Geometric kernels over point clouds.
//!
//! Every function here is pure: randomness comes from an explicit seed and
//! identical inputs give bit-identical outputs.

mod augment;
mod cloud;
mod fps;
mod knn;
mod normalize;
mod split;

pub use augment::{augment, random_rotation, rotate, AugmentConfig, RotationMode};
pub use cloud::{PointCloud, Space};
pub use fps::{farthest_point_sample, farthest_point_sample_from};
pub use knn::{k_nearest, knn_dilated};
pub use normalize::{normalize_unit_cube, UnitCubeAffine};
pub use split::{split_subclouds, SplitMode};

pub type Point = [f64; 3];

#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
