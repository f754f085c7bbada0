use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Point;
use crate::error::{Error, IoContext, Result};

/// Coordinate frame of a [`PointCloud`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Integer voxel indices of the originating volume.
    Voxel,
    /// Normalized coordinates inside `[-1, 1]^3`.
    UnitCube,
}

/// Ordered 3-D points with optional per-point attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub space: Space,
    pub probs: Option<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
    /// Index of each point in the cloud it was drawn from.
    pub source_indices: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, space: Space) -> Self {
        Self {
            points,
            space,
            probs: None,
            labels: None,
            source_indices: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_probs(mut self, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} probabilities for {} points",
                probs.len(),
                self.len()
            )));
        }
        self.probs = Some(probs);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Checks attribute lengths and the unit-cube bound.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.probs.as_ref().map(Vec::len),
            self.labels.as_ref().map(Vec::len),
            self.source_indices.as_ref().map(Vec::len),
        ];
        if lens.iter().flatten().any(|&l| l != n) {
            return Err(Error::Dimension(format!("point attributes do not all have length {n}")));
        }
        if self.space == Space::UnitCube {
            if let Some(p) = self
                .points
                .iter()
                .find(|p| p.iter().any(|c| !(-1.0..=1.0).contains(c)))
            {
                return Err(Error::Input(format!("point {p:?} lies outside the unit cube")));
            }
        }
        Ok(())
    }

    /// The points at `indices` (repeats allowed); `source_indices` records
    /// the positions in `self`.
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            space: self.space,
            probs: self.probs.as_ref().map(|p| indices.iter().map(|&i| p[i]).collect()),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            source_indices: Some(indices.to_vec()),
        }
    }

    /// Writes `x,y,z[,prob][,label]` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        let mut header = String::from("x,y,z");
        if self.probs.is_some() {
            header.push_str(",prob");
        }
        if self.labels.is_some() {
            header.push_str(",label");
        }
        writeln!(w, "{header}")?;
        for (i, p) in self.points.iter().enumerate() {
            write!(w, "{},{},{}", p[0], p[1], p[2])?;
            if let Some(probs) = &self.probs {
                write!(w, ",{}", probs[i])?;
            }
            if let Some(labels) = &self.labels {
                write!(w, ",{}", labels[i])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, space: Space, origin: &Path) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(origin, "empty point-cloud file"))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 3 || cols[..3] != ["x", "y", "z"] {
            return Err(Error::format(origin, format!("header {header:?} must start with x,y,z")));
        }
        let prob_col = cols.iter().position(|c| *c == "prob");
        let label_col = cols.iter().position(|c| *c == "label");
        if cols.len() != 3 + prob_col.is_some() as usize + label_col.is_some() as usize {
            return Err(Error::format(origin, format!("unexpected columns in header {header:?}")));
        }
        let mut points = Vec::new();
        let mut probs = prob_col.map(|_| Vec::new());
        let mut labels = label_col.map(|_| Vec::new());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::format(origin, format!("malformed row {}: {line:?}", lineno + 2));
            if fields.len() != cols.len() {
                return Err(bad());
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
            points.push([num(0)?, num(1)?, num(2)?]);
            if let (Some(c), Some(p)) = (prob_col, probs.as_mut()) {
                p.push(num(c)?);
            }
            if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
                l.push(fields[c].parse::<u8>().map_err(|_| bad())?);
            }
        }
        let cloud = PointCloud {
            points,
            space,
            probs,
            labels,
            source_indices: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path).at(path)?))
    }

    pub fn load_csv(path: &Path, space: Space) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path).at(path)?), space, path)
    }
}
