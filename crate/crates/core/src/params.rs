//! Named parameter collections and the binary checkpoint format.
//!
//! Parameters live in a fixed registration order; every consumer (gradient
//! maps, the optimizer, checkpoints) iterates that order so runs are
//! reproducible byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const MAGIC: [u8; 4] = *b"TFCP";
const VERSION: u8 = 1;

/// Ordered set of named tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, path: impl Into<String>, t: Tensor) -> Result<()> {
        let path = path.into();
        if self.entries.iter().any(|(p, _)| *p == path) {
            return Err(Error::Config(format!("duplicate parameter path: {path}")));
        }
        self.entries.push((path, t.detach()));
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(p, _)| p == path)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Config(format!("unknown parameter path: {path}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(p, t)| (p.as_str(), t))
    }

    pub fn at(&self, i: usize) -> (&str, &Tensor) {
        let (p, t) = &self.entries[i];
        (p.as_str(), t)
    }

    pub fn replace(&mut self, path: &str, t: Tensor) -> Result<()> {
        let i = self
            .entries
            .iter()
            .position(|(p, _)| p == path)
            .ok_or_else(|| Error::Config(format!("unknown parameter path: {path}")))?;
        self.replace_at(i, t)
    }

    pub fn replace_at(&mut self, i: usize, t: Tensor) -> Result<()> {
        if self.entries[i].1.shape() != t.shape() {
            return Err(Error::shape("ParamSet::replace_at", "numel", self.entries[i].1.numel(), t.numel()));
        }
        self.entries[i].1 = t.detach();
        Ok(())
    }

    /// Total scalar parameter count.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copy of this set with a single scalar coordinate shifted by `delta`.
    pub fn perturbed(&self, path: &str, coord: usize, delta: f64) -> Result<ParamSet> {
        let idx = self
            .entries
            .iter()
            .position(|(p, _)| p == path)
            .ok_or_else(|| Error::Config(format!("unknown parameter path: {path}")))?;
        let t = &self.entries[idx].1;
        if coord >= t.numel() {
            return Err(Error::shape("ParamSet::perturbed", "coord", t.numel(), coord));
        }
        let mut data = t.data().to_vec();
        data[coord] += delta;
        let mut copy = self.clone();
        copy.replace_at(idx, Tensor::new(t.shape(), data)?)?;
        Ok(copy)
    }

    /// Zero every tensor whose path satisfies the predicate. Returns how many
    /// tensors were zeroed.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) -> usize {
        let mut n = 0;
        for (p, t) in self.entries.iter_mut() {
            if pred(p) {
                *t = Tensor::zeros(t.shape());
                n += 1;
            }
        }
        n
    }

    // ── checkpoint format ───────────────────────────────────────────
    //
    // magic "TFCP", version byte, u32 record count, then per record:
    // u16 path length + UTF-8 path, u8 rank, u32 dims, f64 payload.
    // All integers and floats little-endian. Round-trips bit-exactly.

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (path, t) in &self.entries {
            let pb = path.as_bytes();
            if pb.len() > u16::MAX as usize {
                return Err(Error::Config(format!("parameter path too long: {path}")));
            }
            w.write_all(&(pb.len() as u16).to_le_bytes())?;
            w.write_all(pb)?;
            let shape = t.shape();
            let dims = shape.dims();
            w.write_all(&[dims.len() as u8])?;
            for &d in dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<ParamSet> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let mut ver = [0u8; 1];
        r.read_exact(&mut ver)?;
        if ver[0] != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ver[0])));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let count = u32::from_le_bytes(buf4) as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let mut buf2 = [0u8; 2];
            r.read_exact(&mut buf2)?;
            let plen = u16::from_le_bytes(buf2) as usize;
            let mut pb = vec![0u8; plen];
            r.read_exact(&mut pb)?;
            let path = String::from_utf8(pb)
                .map_err(|_| Error::Data("checkpoint path is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let rank = rank[0] as usize;
            if !(1..=3).contains(&rank) {
                return Err(Error::Data(format!("checkpoint rank {rank} out of range")));
            }
            let mut dims = [1usize; 3];
            for d in dims.iter_mut().take(rank) {
                r.read_exact(&mut buf4)?;
                *d = u32::from_le_bytes(buf4) as usize;
            }
            let shape = match rank {
                1 => Shape::d1(dims[0]),
                2 => Shape::d2(dims[0], dims[1]),
                _ => Shape::d3(dims[0], dims[1], dims[2]),
            };
            let mut data = vec![0.0f64; shape.numel()];
            let mut buf8 = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf8)?;
                *v = f64::from_le_bytes(buf8);
            }
            set.push(path, Tensor::new(shape, data)?)?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
        let mut r = BufReader::new(File::open(path)?);
        let set = Self::read_from(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Data("trailing bytes after checkpoint records".into()));
        }
        Ok(set)
    }
}
