//! Randomized training corpus of synthetic nerves with background clutter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synth::{generate_with_extras, rasterize_disk, NerveKind, SyntheticCase, SyntheticSpec};
use crate::cloudbuild::Mask;
use crate::error::{Error, Result};
use crate::seed;

/// Sampling ranges for [`generate_corpus`]. Integer ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusRanges {
    pub base: SyntheticSpec,
    pub branching_probability: f64,
    pub diameter: (f64, f64),
    pub q_levels: Vec<f64>,
    /// Largest lateral drift of the centerline control points, in voxels.
    pub max_drift: f64,
    pub drift_points: usize,
    pub short_tubes: (usize, usize),
    pub tube_span: (usize, usize),
    pub blobs: (usize, usize),
    pub blob_radius: (f64, f64),
    pub distractor_q: Vec<f64>,
    /// Minimum in-plane gap between a distractor and the nerve, in voxels.
    pub clearance: f64,
}

impl Default for CorpusRanges {
    fn default() -> Self {
        Self {
            base: SyntheticSpec::default(),
            branching_probability: 0.5,
            diameter: (8.0, 12.0),
            q_levels: vec![0.3, 0.5, 0.7, 0.9],
            max_drift: 6.0,
            drift_points: 4,
            short_tubes: (1, 3),
            tube_span: (1, 10),
            blobs: (0, 2),
            blob_radius: (2.0, 5.0),
            distractor_q: vec![0.3, 0.5, 0.7, 0.9],
            clearance: 12.0,
        }
    }
}

impl CorpusRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, lo: f64, hi: f64| {
            if lo <= hi && lo.is_finite() && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range ({lo}, {hi}) is not ordered")))
            }
        };
        ordered("diameter", self.diameter.0, self.diameter.1)?;
        ordered("blob radius", self.blob_radius.0, self.blob_radius.1)?;
        ordered("short tubes", self.short_tubes.0 as f64, self.short_tubes.1 as f64)?;
        ordered("tube span", self.tube_span.0 as f64, self.tube_span.1 as f64)?;
        ordered("blobs", self.blobs.0 as f64, self.blobs.1 as f64)?;
        if self.q_levels.is_empty() || self.distractor_q.is_empty() {
            return Err(Error::Config("probability level lists must be non-empty".into()));
        }
        if self.tube_span.0 == 0 || self.tube_span.1 > self.base.shape[2] {
            return Err(Error::Config(format!("tube span {:?} outside the slice range", self.tube_span)));
        }
        Ok(())
    }
}

/// One corpus entry with the spec that produced its nerve.
#[derive(Clone, Debug)]
pub struct CorpusCase {
    pub spec: SyntheticSpec,
    pub case: SyntheticCase,
}

fn pick<R: Rng>(rng: &mut R, values: &[f64]) -> f64 {
    values[rng.random_range(0..values.len())]
}

fn nerve_spec<R: Rng>(rng: &mut R, ranges: &CorpusRanges) -> SyntheticSpec {
    let mut spec = ranges.base.clone();
    spec.kind = if rng.random::<f64>() < ranges.branching_probability {
        NerveKind::Branching
    } else {
        NerveKind::Straight
    };
    spec.diameter = rng.random_range(ranges.diameter.0..=ranges.diameter.1);
    spec.q = pick(rng, &ranges.q_levels);
    let [nx, ny, nz] = spec.shape;
    let (cx, cy) = (nx as f64 / 2.0, ny as f64 / 2.0);
    let n = ranges.drift_points.max(2);
    spec.control_points = (0..n)
        .map(|i| {
            let z = i as f64 * (nz - 1) as f64 / (n - 1) as f64;
            let dx = rng.random_range(-ranges.max_drift..=ranges.max_drift);
            let dy = rng.random_range(-ranges.max_drift..=ranges.max_drift);
            [cx + dx, cy + dy, z]
        })
        .collect();
    spec.false_positive = None;
    spec
}

/// Minimum in-plane distance from `p` in slice `z` to the nerve surface.
fn nerve_gap(spec: &SyntheticSpec, z: usize, p: [f64; 2]) -> f64 {
    spec.nerve_centers(z)
        .iter()
        .map(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() - spec.diameter / 2.0)
        .fold(f64::INFINITY, f64::min)
}

fn place_tube<R: Rng>(rng: &mut R, spec: &SyntheticSpec, ranges: &CorpusRanges) -> Option<Mask> {
    let [nx, ny, nz] = spec.shape;
    for _ in 0..100 {
        let span = rng.random_range(ranges.tube_span.0..=ranges.tube_span.1);
        let d = rng.random_range(ranges.diameter.0..=ranges.diameter.1);
        let z0 = rng.random_range(0..=nz - span);
        let c = [
            rng.random_range(d..nx as f64 - 1.0 - d),
            rng.random_range(d..ny as f64 - 1.0 - d),
        ];
        if (z0..z0 + span).any(|z| nerve_gap(spec, z, c) < d / 2.0 + ranges.clearance) {
            continue;
        }
        let mut m = Mask::empty(spec.shape);
        if (z0..z0 + span).all(|z| rasterize_disk(&mut m, z, c, d)) {
            return Some(m);
        }
    }
    None
}

fn place_blob<R: Rng>(rng: &mut R, spec: &SyntheticSpec, ranges: &CorpusRanges) -> Option<Mask> {
    let [nx, ny, nz] = spec.shape;
    let sz = spec.spacing[2] / spec.spacing[0];
    for _ in 0..100 {
        let r = rng.random_range(ranges.blob_radius.0..=ranges.blob_radius.1);
        let c = [
            rng.random_range(r..nx as f64 - 1.0 - r),
            rng.random_range(r..ny as f64 - 1.0 - r),
            rng.random_range(0.0..(nz - 1) as f64),
        ];
        let rz = (r / sz).ceil() as usize;
        let z_lo = (c[2] as usize).saturating_sub(rz);
        let z_hi = (c[2] as usize + rz).min(nz - 1);
        if (z_lo..=z_hi).any(|z| nerve_gap(spec, z, [c[0], c[1]]) < r + ranges.clearance) {
            continue;
        }
        let m = Mask::from_fn(spec.shape, |x, y, z| {
            let dz = (z as f64 - c[2]) * sz;
            (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + dz * dz <= r * r
        });
        if m.count() > 0 {
            return Some(m);
        }
    }
    None
}

/// `n_cases` random phantoms. Distractor tubes and blobs are painted into
/// the probability map but never into the ground truth.
pub fn generate_corpus(n_cases: usize, seed: u64, ranges: &CorpusRanges) -> Result<Vec<CorpusCase>> {
    if n_cases == 0 {
        return Err(Error::Input("corpus needs at least one case".into()));
    }
    ranges.validate()?;
    (0..n_cases)
        .map(|i| {
            let mut rng = seed::rng_at(seed, &[i as u64]);
            let spec = nerve_spec(&mut rng, ranges);
            let mut extras = Vec::new();
            for _ in 0..rng.random_range(ranges.short_tubes.0..=ranges.short_tubes.1) {
                if let Some(m) = place_tube(&mut rng, &spec, ranges) {
                    extras.push((m, pick(&mut rng, &ranges.distractor_q)));
                }
            }
            for _ in 0..rng.random_range(ranges.blobs.0..=ranges.blobs.1) {
                if let Some(m) = place_blob(&mut rng, &spec, ranges) {
                    extras.push((m, pick(&mut rng, &ranges.distractor_q)));
                }
            }
            let case = generate_with_extras(&spec, &extras)?;
            Ok(CorpusCase { spec, case })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cases_rejected() {
        assert!(matches!(generate_corpus(0, 1, &CorpusRanges::default()), Err(Error::Input(_))));
    }

    #[test]
    fn same_seed_same_corpus() {
        let r = CorpusRanges::default();
        let a = generate_corpus(2, 5, &r).unwrap();
        let b = generate_corpus(2, 5, &r).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.case.probability, y.case.probability);
            assert_eq!(x.case.truth, y.case.truth);
        }
    }
}
