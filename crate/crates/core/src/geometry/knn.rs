use rand::seq::index::sample;

use super::{squared_distance, Point};
use crate::error::{Error, Result};
use crate::seed;

/// The `k` nearest points to `query`, closest first; equal distances are
/// ordered by index.
pub fn k_nearest(query: &Point, points: &[Point], k: usize) -> Result<Vec<usize>> {
    if k > points.len() {
        return Err(Error::InsufficientPoints {
            required: k,
            available: points.len(),
        });
    }
    let mut keyed: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (squared_distance(query, p), i))
        .collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, by_key);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(by_key);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Dilated neighborhood: `k` points drawn uniformly without replacement from
/// the `k * dilation` nearest, returned in order of distance.
pub fn knn_dilated(
    query: &Point,
    points: &[Point],
    k: usize,
    dilation: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 || dilation == 0 {
        return Err(Error::Input(format!("neighbor count {k} and dilation {dilation} must be positive")));
    }
    let wide = k * dilation;
    let nearest = k_nearest(query, points, wide)?;
    if dilation == 1 {
        return Ok(nearest);
    }
    let mut picks = sample(&mut seed::rng(seed), wide, k).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| nearest[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincident_query_returns_itself() {
        let pts = [[0.0; 3], [1.0, 2.0, 3.0], [5.0; 3]];
        assert_eq!(knn_dilated(&[1.0, 2.0, 3.0], &pts, 1, 1, 0).unwrap(), vec![1]);
    }

    #[test]
    fn ties_break_by_index() {
        let pts = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 3.0]];
        assert_eq!(k_nearest(&[0.0; 3], &pts, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn insufficient_points_reports_counts() {
        let pts = [[0.0; 3]; 5];
        match knn_dilated(&[0.0; 3], &pts, 3, 2, 0) {
            Err(Error::InsufficientPoints { required, available }) => {
                assert_eq!((required, available), (6, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dilated_sample_is_subset_of_wide_neighborhood() {
        let pts: Vec<Point> = (0..40).map(|i| [i as f64, 0.0, 0.0]).collect();
        let got = knn_dilated(&[0.0; 3], &pts, 4, 3, 11).unwrap();
        assert_eq!(got.len(), 4);
        assert!(got.iter().all(|&i| i < 12));
        assert!(got.windows(2).all(|w| w[0] < w[1]));
    }
}
