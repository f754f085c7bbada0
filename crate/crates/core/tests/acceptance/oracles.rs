//! Geometric kernels and surface distances against brute-force oracles.

use pointrefine::cloudbuild::Mask;
use pointrefine::evalsynth::hd95;
use pointrefine::geometry::{farthest_point_sample, farthest_point_sample_from, knn_dilated, Point};
use pointrefine::seed;
use rand::Rng;

const CASES: u64 = 200;

fn d2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Half of the clouds sit on a coarse integer grid so distance ties and
/// duplicate points are common.
fn random_cloud(rng: &mut impl Rng, max_n: usize) -> Vec<Point> {
    let n = rng.random_range(1..=max_n);
    let grid = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            if grid {
                [0, 1, 2].map(|_| rng.random_range(0..4) as f64)
            } else {
                [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))
            }
        })
        .collect()
}

/// Each step rescans every unchosen point against every chosen one.
fn fps_oracle(points: &[Point], m: usize, first: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < m {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| d2(p, &points[c])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        chosen.push(best.unwrap().1);
    }
    chosen
}

fn min_pairwise(points: &[Point], idx: &[usize]) -> f64 {
    let mut m = f64::INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            m = m.min(d2(&points[i], &points[j]));
        }
    }
    m
}

pub fn fps_matches_greedy_oracle() {
    let mut rng = seed::rng(101);
    for case in 0..CASES {
        let points = random_cloud(&mut rng, 128);
        let m = rng.random_range(1..=points.len());
        let got = farthest_point_sample(&points, m, case).unwrap();
        let want = fps_oracle(&points, m, got[0]);
        assert_eq!(got, want, "case {case}: n {} m {m}", points.len());
        let first = rng.random_range(0..points.len());
        assert_eq!(farthest_point_sample_from(&points, m, first).unwrap(), fps_oracle(&points, m, first));
        let mut sorted = got.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), m, "case {case}: duplicate index");
        if m >= 2 {
            assert_eq!(min_pairwise(&points, &got), min_pairwise(&points, &want));
        }
    }
}

pub fn knn_matches_exhaustive_sort() {
    let mut rng = seed::rng(102);
    for case in 0..CASES {
        let points = random_cloud(&mut rng, 256);
        let k = rng.random_range(1..=points.len());
        let query = if rng.random_bool(0.3) {
            points[rng.random_range(0..points.len())]
        } else {
            [0, 1, 2].map(|_| rng.random_range(-1.0..4.0))
        };
        let mut keyed: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (d2(&query, p), i)).collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = keyed[..k].iter().map(|e| e.1).collect();
        assert_eq!(knn_dilated(&query, &points, k, 1, case).unwrap(), want, "case {case}");
    }
}

fn surface_oracle(m: &Mask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.shape;
    let inside = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && m.get(x as usize, y as usize, z as usize)
    };
    let mut out = Vec::new();
    for x in 0..nx as i64 {
        for y in 0..ny as i64 {
            for z in 0..nz as i64 {
                if !inside(x, y, z) {
                    continue;
                }
                let faces = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if faces.iter().any(|(dx, dy, dz)| !inside(x + dx, y + dy, z + dz)) {
                    out.push([x as usize, y as usize, z as usize]);
                }
            }
        }
    }
    out
}

fn directed_p95(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    (0..3)
                        .map(|i| ((a[i] as f64 - b[i] as f64) * spacing[i]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let rank = (0.95 * d.len() as f64).ceil() as usize;
    d[rank.max(1) - 1]
}

pub fn hd95_matches_all_pairs_oracle() {
    let mut rng = seed::rng(103);
    let mut case = 0;
    while case < CASES {
        let shape = [0, 1, 2].map(|_| rng.random_range(1..=8));
        let spacing = [0, 1, 2].map(|_| rng.random_range(0.5..5.0));
        let (pa, pb) = (rng.random_range(0.05..0.9), rng.random_range(0.05..0.9));
        let a = Mask::from_fn(shape, |_, _, _| rng.random_bool(pa));
        let b = Mask::from_fn(shape, |_, _, _| rng.random_bool(pb));
        if a.count() == 0 || b.count() == 0 {
            continue;
        }
        let (sa, sb) = (surface_oracle(&a), surface_oracle(&b));
        let want = directed_p95(&sa, &sb, spacing).max(directed_p95(&sb, &sa, spacing));
        // The implementation sums the axis terms in another order.
        let got = hd95(&a, &b, spacing).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.max(1.0), "case {case}: shape {shape:?}: {got} vs {want}");
        case += 1;
    }
}

