//! Synthetic tubular phantoms: probability maps with known ground truth.

use serde::{Deserialize, Serialize};

use crate::cloudbuild::{Mask, ProbabilityVolume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NerveKind {
    #[default]
    Straight,
    Branching,
}

/// A short tube parallel to the nerve, excluded from the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FalsePositive {
    /// Number of consecutive slices covered.
    pub span: usize,
    pub q: f64,
    /// In-plane displacement from the nerve centerline at the tube's middle
    /// slice, in voxels.
    pub offset: [f64; 2],
}

impl FalsePositive {
    pub fn new(span: usize, q: f64) -> Self {
        Self {
            span,
            q,
            offset: [0.0, 30.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub shape: [usize; 3],
    /// Voxel size in mm.
    pub spacing: [f64; 3],
    pub kind: NerveKind,
    /// In-plane centerline positions `[x, y, z]` in voxels, linearly
    /// interpolated along z. Empty means a straight line through the
    /// middle of every slice.
    pub control_points: Vec<[f64; 3]>,
    pub diameter: f64,
    pub q: f64,
    pub sigma: f64,
    /// Fraction of slices covered by the trunk before a branching nerve splits.
    pub branch_fraction: f64,
    /// Angle of each child branch against the trunk, in degrees, measured in mm.
    pub branch_angle_deg: f64,
    pub false_positive: Option<FalsePositive>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            shape: [140, 140, 50],
            spacing: [1.0, 1.0, 4.4],
            kind: NerveKind::Straight,
            control_points: Vec::new(),
            diameter: 10.0,
            q: 0.5,
            sigma: 1.0,
            branch_fraction: 0.6,
            branch_angle_deg: 15.0,
            false_positive: None,
        }
    }
}

/// A probability map together with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticCase {
    pub probability: ProbabilityVolume,
    pub truth: Mask,
}

fn check_level(name: &str, q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("{name} {q} outside (0, 1]")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::Config(format!("volume shape {:?} has an empty axis", self.shape)));
        }
        if self.spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("spacing {:?} must be positive", self.spacing)));
        }
        if !(self.diameter >= 1.0) {
            return Err(Error::Config(format!("diameter {} below one voxel", self.diameter)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("smoothing sigma {} is negative", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.branch_fraction) {
            return Err(Error::Config(format!("branch fraction {} outside [0, 1]", self.branch_fraction)));
        }
        check_level("nerve probability", self.q)?;
        if let Some(fp) = &self.false_positive {
            check_level("false-positive probability", fp.q)?;
            if fp.span == 0 || fp.span > self.shape[2] {
                return Err(Error::Config(format!(
                    "false-positive span {} outside 1..={}",
                    fp.span, self.shape[2]
                )));
            }
        }
        Ok(())
    }

    /// Trunk centerline position in slice `z`.
    pub fn trunk_center(&self, z: usize) -> [f64; 2] {
        let pts = &self.control_points;
        let zf = z as f64;
        match pts.len() {
            0 => [self.shape[0] as f64 / 2.0, self.shape[1] as f64 / 2.0],
            1 => [pts[0][0], pts[0][1]],
            _ => {
                let i = pts.windows(2).position(|w| zf <= w[1][2]).unwrap_or(pts.len() - 2);
                let (a, b) = (pts[i], pts[i + 1]);
                let dz = b[2] - a[2];
                let t = if dz.abs() < 1e-12 { 0.0 } else { ((zf - a[2]) / dz).clamp(0.0, 1.0) };
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            }
        }
    }

    /// First slice of the two children of a branching nerve.
    pub fn branch_slice(&self) -> usize {
        (self.branch_fraction * self.shape[2] as f64).round() as usize
    }

    /// Disk centers of the nerve in slice `z`: one for the trunk, two past
    /// the branch point.
    pub fn nerve_centers(&self, z: usize) -> Vec<[f64; 2]> {
        let c = self.trunk_center(z);
        let zb = self.branch_slice();
        if self.kind == NerveKind::Straight || z < zb {
            return vec![c];
        }
        let along_mm = (z - zb) as f64 * self.spacing[2];
        let shift = self.branch_angle_deg.to_radians().tan() * along_mm / self.spacing[0];
        vec![[c[0] - shift, c[1]], [c[0] + shift, c[1]]]
    }

    /// First slice and centre of the false-positive tube, centred in z.
    pub fn false_positive_layout(&self) -> Option<(usize, [f64; 2])> {
        let fp = self.false_positive?;
        let z0 = (self.shape[2] - fp.span) / 2;
        let c = self.trunk_center(z0 + fp.span / 2);
        Some((z0, [c[0] + fp.offset[0], c[1] + fp.offset[1]]))
    }
}

/// Marks the in-plane disk of `diameter` around `center` in slice `z`.
/// Returns false if any part of the disk leaves the slice.
pub fn rasterize_disk(mask: &mut Mask, z: usize, center: [f64; 2], diameter: f64) -> bool {
    let r = diameter / 2.0;
    let [nx, ny, _] = mask.shape;
    if center[0] - r < 0.0 || center[1] - r < 0.0 || center[0] + r > (nx - 1) as f64 || center[1] + r > (ny - 1) as f64 {
        return false;
    }
    let (x0, x1) = ((center[0] - r).floor() as usize, (center[0] + r).ceil() as usize);
    let (y0, y1) = ((center[1] - r).floor() as usize, (center[1] + r).ceil() as usize);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - center[0], y as f64 - center[1]);
            if dx * dx + dy * dy <= r * r {
                mask.set(x, y, z, true);
            }
        }
    }
    true
}

/// Separable Gaussian filter with kernel radius `ceil(4 sigma)` and
/// mirrored borders (`d c b a | a b c d`).
pub fn gaussian_smooth(values: &[f64], shape: [usize; 3], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let mut m = i.rem_euclid(period);
        if m >= n {
            m = period - 1 - m;
        }
        m as usize
    };
    let strides = [1, shape[0], shape[0] * shape[1]];
    let mut cur = values.to_vec();
    let mut next = vec![0.0; values.len()];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = shape[axis];
        let stride = strides[axis];
        for start in 0..cur.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|i| cur[start + i * stride]));
            for i in 0..n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * line[reflect(i as isize + k as isize - radius, n)];
                }
                next[start + i * stride] = acc;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Rasterized phantom for `spec`. The ground truth is the unsmoothed nerve;
/// the false positive, if any, only enters the probability map.
pub fn generate_nerve(spec: &SyntheticSpec) -> Result<SyntheticCase> {
    generate_with_extras(spec, &[])
}

/// Like [`generate_nerve`], with extra background structures painted at the
/// given probabilities before smoothing.
pub fn generate_with_extras(spec: &SyntheticSpec, extras: &[(Mask, f64)]) -> Result<SyntheticCase> {
    spec.validate()?;
    let shape = spec.shape;
    let mut truth = Mask::empty(shape);
    for z in 0..shape[2] {
        for c in spec.nerve_centers(z) {
            if !rasterize_disk(&mut truth, z, c, spec.diameter) {
                return Err(Error::Config(format!("nerve leaves the volume at slice {z} (centre {c:?})")));
            }
        }
    }
    let mut raw: Vec<f64> = truth.values.iter().map(|&t| if t { spec.q } else { 0.0 }).collect();
    let mut paint = |m: &Mask, q: f64| {
        for (r, &on) in raw.iter_mut().zip(&m.values) {
            if on {
                *r = r.max(q);
            }
        }
    };
    if let (Some(fp), Some((z0, c))) = (spec.false_positive, spec.false_positive_layout()) {
        let mut m = Mask::empty(shape);
        for z in z0..z0 + fp.span {
            if !rasterize_disk(&mut m, z, c, spec.diameter) {
                return Err(Error::Config(format!("false positive leaves the volume at slice {z}")));
            }
        }
        if m.values.iter().zip(&truth.values).any(|(a, b)| *a && *b) {
            return Err(Error::Config("false positive overlaps the nerve".into()));
        }
        paint(&m, fp.q);
    }
    for (m, q) in extras {
        if m.shape != shape {
            return Err(Error::Input(format!("extra structure shape {:?} differs from {shape:?}", m.shape)));
        }
        paint(m, *q);
    }
    let smoothed = gaussian_smooth(&raw, shape, spec.sigma)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(SyntheticCase {
        probability: ProbabilityVolume::new(shape, spec.spacing, smoothed)?,
        truth,
    })
}
