//! Point-set bookkeeping for one X-Conv stage, computed outside the graph.

use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sample_from, knn_dilated, Point};
use crate::seed;

/// Neighbor rows and localized coordinates for a batch of subclouds.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    /// Representative points per subcloud, in output row order.
    pub reps: Vec<Vec<Point>>,
    pub k: usize,
    /// `rows * k` indices into the stacked source rows.
    pub neighbors: Vec<usize>,
    /// `rows * k * 3` neighbor coordinates relative to their representative.
    pub local: Vec<f64>,
}

impl StagePlan {
    pub fn rows(&self) -> usize {
        self.reps.iter().map(Vec::len).sum()
    }
}

/// Representative subset of `points`. Keeps the input order when all points
/// are requested; otherwise farthest-point sampling from a start chosen by
/// coordinate hash, so the choice does not depend on point order.
pub fn select_representatives(points: &[Point], n_out: usize, seed: u64) -> Result<Vec<Point>> {
    if n_out == points.len() {
        return Ok(points.to_vec());
    }
    let first = points
        .iter()
        .enumerate()
        .min_by_key(|(i, p)| (seed::derive_point(seed, p), *i))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InsufficientPoints {
            required: n_out,
            available: 0,
        })?;
    let picked = farthest_point_sample_from(points, n_out, first)?;
    Ok(picked.into_iter().map(|i| points[i]).collect())
}

/// Neighborhoods of every representative within its own subcloud. All
/// sources must have the same length so stacked row offsets are uniform.
pub fn plan_stage(
    sources: &[Vec<Point>],
    reps: Vec<Vec<Point>>,
    k: usize,
    dilation: usize,
    seed: u64,
) -> Result<StagePlan> {
    if sources.len() != reps.len() {
        return Err(Error::Input(format!(
            "{} source clouds for {} representative sets",
            sources.len(),
            reps.len()
        )));
    }
    let rows: usize = reps.iter().map(Vec::len).sum();
    let mut neighbors = Vec::with_capacity(rows * k);
    let mut local = Vec::with_capacity(rows * k * 3);
    let mut offset = 0;
    for (src, rs) in sources.iter().zip(&reps) {
        for r in rs {
            let idx = knn_dilated(r, src, k, dilation, seed::derive_point(seed, r))?;
            for i in idx {
                neighbors.push(offset + i);
                let p = src[i];
                local.extend_from_slice(&[p[0] - r[0], p[1] - r[1], p[2] - r[2]]);
            }
        }
        offset += src.len();
    }
    Ok(StagePlan {
        reps,
        k,
        neighbors,
        local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Point> {
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    #[test]
    fn full_selection_is_identity() {
        let p = line(5);
        assert_eq!(select_representatives(&p, 5, 1).unwrap(), p);
    }

    #[test]
    fn selection_ignores_input_order() {
        use rand::Rng;
        let mut rng = seed::rng(4);
        let p: Vec<Point> = (0..20).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let mut q = p.clone();
        q.reverse();
        let mut a = select_representatives(&p, 6, 9).unwrap();
        let mut b = select_representatives(&q, 6, 9).unwrap();
        a.sort_by(|x, y| x[0].total_cmp(&y[0]));
        b.sort_by(|x, y| x[0].total_cmp(&y[0]));
        assert_eq!(a, b);
    }

    #[test]
    fn neighbor_rows_are_offset_per_cloud() {
        let src = vec![line(4), line(4)];
        let reps = vec![vec![[0.0, 0.0, 0.0]], vec![[3.0, 0.0, 0.0]]];
        let plan = plan_stage(&src, reps, 2, 1, 0).unwrap();
        assert_eq!(plan.rows(), 2);
        assert_eq!(plan.neighbors, vec![0, 1, 7, 6]);
        assert_eq!(&plan.local[..6], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(&plan.local[6..], &[0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    }
}
