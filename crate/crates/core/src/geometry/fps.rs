use rand::Rng;

use super::{squared_distance, Point};
use crate::error::{Error, Result};
use crate::seed;

/// Greedy farthest point sampling with a seeded random first pick.
pub fn farthest_point_sample(points: &[Point], m: usize, seed: u64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::Input("farthest point sampling of an empty cloud".into()));
    }
    let first = seed::rng(seed).random_range(0..points.len());
    farthest_point_sample_from(points, m, first)
}

/// Greedy farthest point sampling starting at index `first`.
///
/// Each later pick maximizes the distance to the nearest already-chosen
/// point; ties go to the lowest index.
pub fn farthest_point_sample_from(points: &[Point], m: usize, first: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::Input(format!(
            "cannot select {m} representative points from {n}"
        )));
    }
    if first >= n {
        return Err(Error::Input(format!("first index {first} out of range for {n} points")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut nearest = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        chosen.push(current);
        nearest[current] = f64::NEG_INFINITY;
        if chosen.len() == m {
            break;
        }
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if nearest[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = squared_distance(p, &anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if best == usize::MAX || nearest[i] > best_d {
                best = i;
                best_d = nearest[i];
            }
        }
        current = best;
    }
    Ok(chosen)
}
