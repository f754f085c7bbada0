//! Dense voxel grids and their on-disk format.
//!
//! A volume is stored as raw little-endian `f64` values, x fastest, next to
//! a sidecar text header with the same stem and a `.meta` suffix:
//!
//! ```text
//! shape=X,Y,Z
//! spacing=sx,sy,sz
//! format=f64le
//! version=1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeHeader {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
}

impl VolumeHeader {
    pub fn voxel_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.contains(&0) {
            return Err(Error::Input(format!("volume shape {:?} has an empty axis", self.shape)));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Input(format!("voxel spacing {:?} must be positive", self.spacing)));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.shape[0];
        let r = i / self.shape[0];
        [x, r % self.shape[1], r / self.shape[1]]
    }

    fn meta_text(&self) -> String {
        let [x, y, z] = self.shape;
        let [sx, sy, sz] = self.spacing;
        format!("shape={x},{y},{z}\nspacing={sx},{sy},{sz}\nformat=f64le\nversion=1\n")
    }
}

fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

pub fn write_volume_file(path: &Path, header: &VolumeHeader, values: &[f64]) -> Result<()> {
    header.validate()?;
    if values.len() != header.voxel_count() {
        return Err(Error::Dimension(format!(
            "{} values for volume of shape {:?}",
            values.len(),
            header.shape
        )));
    }
    let mut raw = Vec::with_capacity(values.len() * 8);
    for v in values {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, raw).at(path)?;
    let meta = meta_path(path);
    fs::write(&meta, header.meta_text()).at(&meta)?;
    Ok(())
}

pub fn read_volume_file(path: &Path) -> Result<(VolumeHeader, Vec<f64>)> {
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta)
        .map_err(|e| Error::format(&meta, format!("cannot read volume header: {e}")))?;
    let mut shape = None;
    let mut spacing = None;
    let mut format_ok = false;
    let mut version_ok = false;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&meta, format!("line {line:?} is not key=value")))?;
        match k.trim() {
            "shape" => {
                let p = triple(v).ok_or_else(|| Error::format(&meta, "shape needs three values"))?;
                let mut s = [0usize; 3];
                for (d, t) in s.iter_mut().zip(p) {
                    *d = t.parse().map_err(|_| Error::format(&meta, format!("bad shape {v:?}")))?;
                }
                shape = Some(s);
            }
            "spacing" => {
                let p = triple(v).ok_or_else(|| Error::format(&meta, "spacing needs three values"))?;
                let mut s = [0f64; 3];
                for (d, t) in s.iter_mut().zip(p) {
                    *d = t.parse().map_err(|_| Error::format(&meta, format!("bad spacing {v:?}")))?;
                }
                spacing = Some(s);
            }
            "format" => format_ok = v.trim() == "f64le",
            "version" => version_ok = v.trim() == "1",
            other => return Err(Error::format(&meta, format!("unknown key {other:?}"))),
        }
    }
    if !format_ok || !version_ok {
        return Err(Error::format(&meta, "expected format=f64le and version=1"));
    }
    let header = VolumeHeader {
        shape: shape.ok_or_else(|| Error::format(&meta, "missing shape"))?,
        spacing: spacing.ok_or_else(|| Error::format(&meta, "missing spacing"))?,
    };
    header.validate()?;
    let raw = fs::read(path).at(path)?;
    if raw.len() != header.voxel_count() * 8 {
        return Err(Error::format(
            path,
            format!("expected {} bytes for shape {:?}, found {}", header.voxel_count() * 8, header.shape, raw.len()),
        ));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

fn triple(v: &str) -> Option<Vec<&str>> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    (parts.len() == 3).then_some(parts)
}

/// Per-voxel foreground probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVolume {
    pub header: VolumeHeader,
    pub values: Vec<f64>,
}

impl ProbabilityVolume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], values: Vec<f64>) -> Result<Self> {
        let header = VolumeHeader { shape, spacing };
        header.validate()?;
        if values.len() != header.voxel_count() {
            return Err(Error::Dimension(format!("{} values for shape {shape:?}", values.len())));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!(
                "probability {v} at voxel {:?} outside [0, 1]",
                header.coords(i)
            )));
        }
        Ok(Self { header, values })
    }

    pub fn zeros(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(shape, spacing, vec![0.0; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.header.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.header.spacing
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.header.index(x, y, z)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Subtracts the global mean and divides by the global population
    /// standard deviation. A constant volume is divided by 1 and flagged.
    pub fn standardize(&self) -> StandardizedVolume {
        let n = self.values.len() as f64;
        let rough = self.values.iter().sum::<f64>() / n;
        let mean = rough + self.values.iter().map(|v| v - rough).sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let constant = lo == hi;
        let mean = if constant { lo } else { mean };
        let std = var.sqrt();
        let degenerate = constant || !(std > 0.0);
        let divisor = if degenerate { 1.0 } else { std };
        StandardizedVolume {
            header: self.header,
            values: self.values.iter().map(|v| (v - mean) / divisor).collect(),
            mean_used: mean,
            std_used: divisor,
            degenerate,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_volume_file(path, &self.header, &self.values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, v) = read_volume_file(path)?;
        Self::new(h.shape, h.spacing, v).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Probability volume after subject-level z-scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedVolume {
    pub header: VolumeHeader,
    pub values: Vec<f64>,
    pub mean_used: f64,
    pub std_used: f64,
    pub degenerate: bool,
}

/// Binary segmentation on a voxel grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub shape: [usize; 3],
    pub values: Vec<bool>,
}

impl Mask {
    pub fn empty(shape: [usize; 3]) -> Self {
        Self {
            shape,
            values: vec![false; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut m = Self::empty(shape);
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    m.values[x + shape[0] * (y + shape[1] * z)] = f(x, y, z);
                }
            }
        }
        m
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.values[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.values[i] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn save(&self, path: &Path, spacing: [f64; 3]) -> Result<()> {
        let header = VolumeHeader {
            shape: self.shape,
            spacing,
        };
        let values: Vec<f64> = self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        write_volume_file(path, &header, &values)
    }

    pub fn load(path: &Path) -> Result<(Self, [f64; 3])> {
        let (h, v) = read_volume_file(path)?;
        let mut values = Vec::with_capacity(v.len());
        for (i, x) in v.iter().enumerate() {
            values.push(match *x {
                0.0 => false,
                1.0 => true,
                other => {
                    return Err(Error::format(
                        path,
                        format!("mask value {other} at voxel {:?} is not 0 or 1", h.coords(i)),
                    ))
                }
            });
        }
        Ok((Self { shape: h.shape, values }, h.spacing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_volume_is_degenerate() {
        let v = ProbabilityVolume::new([2, 2, 1], [1.0; 3], vec![0.3; 4]).unwrap();
        let s = v.standardize();
        assert!(s.degenerate);
        assert!(s.values.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn two_level_volume_standardizes_to_unit_scores() {
        let v = ProbabilityVolume::new([4, 1, 1], [1.0; 3], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = v.standardize();
        assert_eq!(s.values, vec![-1.0, 1.0, -1.0, 1.0]);
        assert!(!s.degenerate);
    }

    #[test]
    fn out_of_range_probability_rejected() {
        let err = ProbabilityVolume::new([1, 1, 2], [1.0; 3], vec![0.5, 1.5]).unwrap_err();
        assert!(err.to_string().contains("[0, 0, 1]"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("case.vol");
        let v = ProbabilityVolume::new([3, 2, 2], [1.0, 1.0, 4.4], (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        v.save(&p).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("case.meta")).unwrap();
        assert_eq!(meta, "shape=3,2,2\nspacing=1,1,4.4\nformat=f64le\nversion=1\n");
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 96);
        assert_eq!(ProbabilityVolume::load(&p).unwrap(), v);
    }

    #[test]
    fn index_is_x_fastest() {
        let h = VolumeHeader { shape: [3, 4, 5], spacing: [1.0; 3] };
        assert_eq!(h.index(1, 0, 0), 1);
        assert_eq!(h.index(0, 1, 0), 3);
        assert_eq!(h.index(0, 0, 1), 12);
        assert_eq!(h.coords(h.index(2, 3, 4)), [2, 3, 4]);
    }
}
