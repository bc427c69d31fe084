//! `MGFR` checkpoint archive.
//!
//! Layout, all integers and floats little-endian:
//! magic `MGFR`, u32 version, u64 length + JSON config snapshot, u64 pyramid
//! seed, the decimation hierarchy (root topology, then per level the kept
//! indices, coarse topology and positions), u64 parameter count and one
//! record per parameter: u32 name length, name, u32 rank, u64 dims, f64
//! values. Parameters are written in sorted name order.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use super::config::TrainConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::face::MeshTopology;
use crate::nn::Module;
use crate::sampling::{DecimationLevel, MeshHierarchy, SamplingMatrix};
use crate::tensor::{SparseMatrix, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGFR";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.0.extend_from_slice(b);
    }
    fn topology(&mut self, t: &MeshTopology) {
        self.usize(t.n_vertices);
        for p in &t.reference {
            p.iter().for_each(|v| self.f64(*v));
        }
        self.usize(t.faces.len());
        for f in &t.faces {
            f.iter().for_each(|v| self.usize(*v));
        }
        let edges: Vec<(usize, usize)> = t
            .adjacency
            .entries()
            .filter(|e| e.0 < e.1)
            .map(|e| (e.0, e.1))
            .collect();
        self.usize(edges.len());
        for (a, b) in edges {
            self.usize(a);
            self.usize(b);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated at byte {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.path, format!("count {v} too large")))
    }
    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(Error::format(
                self.path,
                format!("count {n} exceeds file size"),
            ));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count(1)?;
        self.take(n)
    }
    fn index(&mut self, bound: usize) -> Result<usize> {
        let v = self.usize()?;
        if v >= bound {
            return Err(Error::format(
                self.path,
                format!("index {v} out of range {bound}"),
            ));
        }
        Ok(v)
    }
    fn topology(&mut self) -> Result<MeshTopology> {
        let n = self.count(24)?;
        let mut reference = Vec::with_capacity(n);
        for _ in 0..n {
            reference.push([self.f64()?, self.f64()?, self.f64()?]);
        }
        let nf = self.count(24)?;
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            faces.push([self.index(n)?, self.index(n)?, self.index(n)?]);
        }
        let ne = self.count(16)?;
        let mut entries = Vec::with_capacity(2 * ne);
        for _ in 0..ne {
            let (a, b) = (self.index(n)?, self.index(n)?);
            entries.push((a, b, 1.0));
            entries.push((b, a, 1.0));
        }
        let adjacency = SparseMatrix::from_triplets(n, n, entries, true)
            .map_err(|e| Error::format(self.path, format!("adjacency: {e}")))?;
        Ok(MeshTopology {
            n_vertices: n,
            adjacency,
            faces,
            reference,
        })
    }
}

/// Serializes the model into checkpoint bytes.
pub fn checkpoint_bytes(model: &mut Model) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let config = serde_json::to_vec(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    w.bytes(&config);
    w.u64(model.pyramid.seed());
    let h = &model.hierarchy;
    w.topology(&h.root);
    w.usize(h.levels.len());
    for level in &h.levels {
        w.usize(level.sampling.fine);
        w.usize(level.sampling.kept.len());
        level.sampling.kept.iter().for_each(|v| w.usize(*v));
        w.topology(&level.topology);
        for p in &level.positions {
            p.iter().for_each(|v| w.f64(*v));
        }
    }
    let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
    model.visit("", &mut |name, t| {
        params.insert(name.to_string(), t.clone());
    });
    w.usize(params.len());
    for (name, t) in &params {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
        w.u32(t.ndim() as u32);
        t.shape().iter().for_each(|d| w.usize(*d));
        t.data().iter().for_each(|v| w.f64(*v));
    }
    Ok(w.0)
}

pub fn save_checkpoint(model: &mut Model, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write then rename so an interrupted save never clobbers the last good file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::format(path, "missing MGFR magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let config: TrainConfig = serde_json::from_slice(r.bytes()?)
        .map_err(|e| Error::format(path, format!("config: {e}")))?;
    let pyramid_seed = r.u64()?;
    if pyramid_seed != config.pyramid_seed {
        return Err(Error::format(
            path,
            "pyramid seed disagrees with the config snapshot",
        ));
    }
    let root = Arc::new(r.topology()?);
    let n_levels = r.count(16)?;
    let mut levels: Vec<DecimationLevel> = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        let fine = r.usize()?;
        let parent_n = levels
            .last()
            .map_or(root.n_vertices, |l| l.topology.n_vertices);
        if fine != parent_n {
            return Err(Error::format(
                path,
                format!("level expects {fine} fine vertices, parent has {parent_n}"),
            ));
        }
        let m = r.count(8)?;
        let kept = (0..m).map(|_| r.index(fine)).collect::<Result<Vec<_>>>()?;
        let topology = r.topology()?;
        if topology.n_vertices != m {
            return Err(Error::format(
                path,
                "coarse topology size disagrees with the selection",
            ));
        }
        let mut positions = Vec::with_capacity(m);
        for _ in 0..m {
            positions.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        levels.push(DecimationLevel {
            topology: Arc::new(topology),
            sampling: SamplingMatrix {
                fine,
                kept: Arc::new(kept),
            },
            positions,
        });
    }
    let hierarchy = Arc::new(MeshHierarchy { root, levels });
    let n_params = r.count(8)?;
    let mut params: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..n_params {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| Error::format(path, "parameter too large"))?;
        let values = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.insert(name, (shape, values));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }
    let mut model = Model::new(config, hierarchy)?;
    let mut err = None;
    model.visit("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match params.remove(name) {
            None => err = Some(Error::MissingParameter(name.to_string())),
            Some((shape, _)) if shape != t.shape() => {
                err = Some(Error::shape(
                    "checkpoint",
                    format!("{name} {:?}", t.shape()),
                    format!("{shape:?}"),
                ))
            }
            Some((shape, values)) => {
                let fresh = Tensor::new(values, &shape).expect("checked shape");
                *t = if t.grad_enabled() {
                    fresh.requires_grad()
                } else {
                    fresh
                };
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = params.keys().next() {
        return Err(Error::format(
            path,
            format!("unexpected parameter `{extra}`"),
        ));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, path)
}
