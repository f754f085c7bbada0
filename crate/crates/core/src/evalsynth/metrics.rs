//! Overlap and surface-distance metrics on binary volumes.

use crate::cloudbuild::Mask;
use crate::error::{Error, Result};

fn same_shape(a: &Mask, b: &Mask) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Input(format!("mask shapes differ: {:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

/// `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    same_shape(a, b)?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let both = a.values.iter().zip(&b.values).filter(|(x, y)| **x && **y).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// `1 - ||a|-|b|| / (|a|+|b|)`; two empty masks score 1.
pub fn volumetric_similarity(a: &Mask, b: &Mask) -> Result<f64> {
    same_shape(a, b)?;
    let (na, nb) = (a.count() as f64, b.count() as f64);
    if na + nb == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (na - nb).abs() / (na + nb))
}

/// Foreground voxels with a background face neighbor or on the volume border.
pub fn surface_voxels(m: &Mask) -> Vec<[usize; 3]> {
    let [nx, ny, nz] = m.shape;
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !m.get(x, y, z) {
                    continue;
                }
                let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                if border
                    || !m.get(x - 1, y, z)
                    || !m.get(x + 1, y, z)
                    || !m.get(x, y - 1, z)
                    || !m.get(x, y + 1, z)
                    || !m.get(x, y, z - 1)
                    || !m.get(x, y, z + 1)
                {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// Distance in mm from each voxel of `from` to its nearest voxel in `to`.
/// `to` is bucketed by slice so the search can stop once the slice gap
/// alone exceeds the best distance found.
fn directed_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3], nz: usize) -> Vec<f64> {
    let mut slices: Vec<Vec<[f64; 2]>> = vec![Vec::new(); nz];
    for v in to {
        slices[v[2]].push([v[0] as f64 * spacing[0], v[1] as f64 * spacing[1]]);
    }
    from.iter()
        .map(|v| {
            let (px, py) = (v[0] as f64 * spacing[0], v[1] as f64 * spacing[1]);
            let mut best = f64::INFINITY;
            for gap in 0..nz {
                let dz = gap as f64 * spacing[2];
                if dz * dz >= best {
                    break;
                }
                let below = v[2].checked_sub(gap);
                let above = (gap > 0).then_some(v[2] + gap).filter(|z| *z < nz);
                for z in below.into_iter().chain(above) {
                    for q in &slices[z] {
                        let d = (q[0] - px).powi(2) + (q[1] - py).powi(2) + dz * dz;
                        if d < best {
                            best = d;
                        }
                    }
                }
            }
            best.sqrt()
        })
        .collect()
}

/// Nearest-rank percentile `p` in (0, 100] of a non-empty list.
pub fn nearest_rank(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

fn surface_pair(a: &Mask, b: &Mask, spacing: [f64; 3]) -> Result<(Vec<f64>, Vec<f64>)> {
    same_shape(a, b)?;
    if a.count() == 0 || b.count() == 0 {
        return Err(Error::UndefinedMetric(format!(
            "surface distance needs two non-empty masks, got {} and {} voxels",
            a.count(),
            b.count()
        )));
    }
    let (sa, sb) = (surface_voxels(a), surface_voxels(b));
    let nz = a.shape[2];
    Ok((directed_distances(&sa, &sb, spacing, nz), directed_distances(&sb, &sa, spacing, nz)))
}

/// Maximum of the two directed 95th-percentile surface distances, in mm.
pub fn hd95(a: &Mask, b: &Mask, spacing: [f64; 3]) -> Result<f64> {
    let (mut ab, mut ba) = surface_pair(a, b, spacing)?;
    Ok(nearest_rank(&mut ab, 95.0).max(nearest_rank(&mut ba, 95.0)))
}

/// Symmetric Hausdorff distance between surfaces, in mm.
pub fn hausdorff(a: &Mask, b: &Mask, spacing: [f64; 3]) -> Result<f64> {
    let (ab, ba) = surface_pair(a, b, spacing)?;
    Ok(ab.iter().chain(&ba).fold(0.0, |m: f64, d| m.max(*d)))
}
