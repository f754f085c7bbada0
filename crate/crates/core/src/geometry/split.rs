use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Shuffled partition; the last chunk is topped up by resampling with
    /// replacement from the whole cloud.
    Train,
    /// Shuffled partition whose last chunk is topped up with distinct points
    /// not already in it, so every point is covered by exactly one full-size
    /// draw except the fillers.
    Cover,
}

/// Splits a cloud into fixed-size subclouds. Every subcloud records its
/// `source_indices` into `cloud`.
pub fn split_subclouds(cloud: &PointCloud, subsize: usize, seed: u64, mode: SplitMode) -> Vec<PointCloud> {
    let n = cloud.len();
    if n == 0 || subsize == 0 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(n.div_ceil(subsize));
    for chunk in order.chunks(subsize) {
        let mut idx = chunk.to_vec();
        if idx.len() < subsize {
            let missing = subsize - idx.len();
            match mode {
                SplitMode::Cover if n >= subsize => {
                    let mut taken = vec![false; n];
                    idx.iter().for_each(|&i| taken[i] = true);
                    let mut rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
                    let (picked, _) = rest.partial_shuffle(&mut rng, missing);
                    idx.extend_from_slice(picked);
                }
                _ => idx.extend((0..missing).map(|_| rng.random_range(0..n))),
            }
        }
        out.push(cloud.subset(&idx));
    }
    out
}
