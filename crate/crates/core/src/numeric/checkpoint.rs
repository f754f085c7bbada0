//! Parameter archive.
//!
//! Layout: a plain-text header terminated by a line `end`, then one binary
//! record per tensor:
//!
//! ```text
//! pointrefine-checkpoint
//! version=1
//! parameter_count=<total scalars over all tensors>
//! tensor_count=<n>
//! meta.<key>=<value>        (zero or more)
//! end
//! ```
//!
//! Each record is `u32 name length`, UTF-8 name, `u32 rank`, `u64` per
//! dimension, then the row-major values as little-endian `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::array::DiffArray;
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &str = "pointrefine-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, DiffArray)>,
}

impl Checkpoint {
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&DiffArray> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "version={VERSION}")?;
        writeln!(w, "parameter_count={}", self.parameter_count())?;
        writeln!(w, "tensor_count={}", self.tensors.len())?;
        for (k, v) in &self.meta {
            if k.contains(['\n', '=']) || v.contains('\n') {
                return Err(Error::Input(format!("checkpoint metadata {k:?} is not single-line")));
            }
            writeln!(w, "meta.{k}={v}")?;
        }
        writeln!(w, "end")?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        let mut line = String::new();
        let mut next_line = |r: &mut R| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::format(origin, "truncated header"));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != MAGIC {
            return Err(bad("missing checkpoint magic line".into()));
        }
        let mut version = None;
        let mut declared_count = None;
        let mut tensor_count = None;
        let mut meta = BTreeMap::new();
        loop {
            let l = next_line(&mut r)?;
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| bad(format!("header line {l:?} is not key=value")))?;
            let parse = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad number in {l:?}")));
            match k {
                "version" => version = Some(parse(v)?),
                "parameter_count" => declared_count = Some(parse(v)?),
                "tensor_count" => tensor_count = Some(parse(v)?),
                _ => match k.strip_prefix("meta.") {
                    Some(key) => {
                        meta.insert(key.to_string(), v.to_string());
                    }
                    None => return Err(bad(format!("unknown header key {k:?}"))),
                },
            }
        }
        if version != Some(VERSION as usize) {
            return Err(bad(format!("unsupported version {version:?}")));
        }
        let tensor_count = tensor_count.ok_or_else(|| bad("missing tensor_count".into()))?;
        let declared_count = declared_count.ok_or_else(|| bad("missing parameter_count".into()))?;
        let mut tensors = Vec::with_capacity(tensor_count);
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        for _ in 0..tensor_count {
            r.read_exact(&mut u32buf).map_err(|_| bad("truncated tensor record".into()))?;
            let mut name = vec![0u8; u32::from_le_bytes(u32buf) as usize];
            r.read_exact(&mut name).map_err(|_| bad("truncated tensor name".into()))?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            r.read_exact(&mut u32buf).map_err(|_| bad("truncated rank".into()))?;
            let rank = u32::from_le_bytes(u32buf) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                r.read_exact(&mut u64buf).map_err(|_| bad("truncated shape".into()))?;
                shape.push(u64::from_le_bytes(u64buf) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut u64buf)
                    .map_err(|_| bad(format!("truncated values of tensor {name:?}")))?;
                data.push(f64::from_le_bytes(u64buf));
            }
            tensors.push((name, DiffArray::new(shape, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        let ck = Self { meta, tensors };
        if ck.parameter_count() != declared_count {
            return Err(bad(format!(
                "header declares {declared_count} values, archive holds {}",
                ck.parameter_count()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path).at(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).at(path)?;
        Self::read_from(BufReader::new(f), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.meta.insert("spec".into(), "{\"a\":1}".into());
        ck.tensors.push(("w".into(), DiffArray::new([2, 2], vec![1.0, -2.0, 3.5, 1e-300]).unwrap()));
        ck.tensors.push(("b".into(), DiffArray::new([3], vec![0.0, f64::MIN_POSITIVE, 7.0]).unwrap()));
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        let header = String::from_utf8_lossy(&buf[..60]);
        assert!(header.starts_with("pointrefine-checkpoint\nversion=1\nparameter_count=7\n"));
    }

    #[test]
    fn truncation_is_reported() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = Checkpoint::read_from(&buf[..], Path::new("model.ckpt")).unwrap_err();
        assert!(err.to_string().contains("model.ckpt"), "{err}");
    }

    #[test]
    fn wrong_magic_rejected() {
        let err = Checkpoint::read_from(&b"hello\n"[..], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
