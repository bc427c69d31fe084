//! Mean shape and linear identity/expression bases.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MeshTopology, N_EXP, N_ID};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BASIS_MAGIC: &[u8; 4] = b"MGFB";
const BASIS_VERSION: u32 = 1;

/// `V_mean` plus 50 identity and 51 expression direction fields, each stored
/// as a row of a `[k, 3n]` matrix in vertex-major xyz order.
#[derive(Debug, Clone)]
pub struct FaceBasis {
    pub topology: Arc<MeshTopology>,
    mean: Tensor,
    id_basis: Tensor,
    exp_basis: Tensor,
}

impl FaceBasis {
    pub fn new(
        topology: Arc<MeshTopology>,
        mean: Vec<f64>,
        id: Vec<f64>,
        exp: Vec<f64>,
    ) -> Result<Self> {
        let n = topology.n_vertices;
        let mean = Tensor::new(mean, &[n, 3])?;
        let id_basis = Tensor::new(id, &[N_ID, 3 * n])?;
        let exp_basis = Tensor::new(exp, &[N_EXP, 3 * n])?;
        for (what, t) in [
            ("mean", &mean),
            ("identity basis", &id_basis),
            ("expression basis", &exp_basis),
        ] {
            if let Some(i) = t.first_non_finite() {
                return Err(Error::NonFinite {
                    what: what.into(),
                    index: i,
                });
            }
        }
        Ok(FaceBasis {
            topology,
            mean,
            id_basis,
            exp_basis,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.topology.n_vertices
    }

    /// `[n, 3]`.
    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    /// `[50, 3n]`.
    pub fn id_matrix(&self) -> &Tensor {
        &self.id_basis
    }

    /// `[51, 3n]`.
    pub fn exp_matrix(&self) -> &Tensor {
        &self.exp_basis
    }

    pub fn id_field(&self, k: usize) -> &[f64] {
        let w = 3 * self.n_vertices();
        &self.id_basis.data()[k * w..(k + 1) * w]
    }

    pub fn exp_field(&self, k: usize) -> &[f64] {
        let w = 3 * self.n_vertices();
        &self.exp_basis.data()[k * w..(k + 1) * w]
    }

    /// All 101 fields, identity first.
    pub fn fields(&self) -> impl Iterator<Item = &[f64]> {
        (0..N_ID)
            .map(|k| self.id_field(k))
            .chain((0..N_EXP).map(|k| self.exp_field(k)))
    }

    /// Writes the `MGFB` format: magic, u32 version, u64 n, then mean, identity
    /// and expression blocks as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * (3 + 3 * (N_ID + N_EXP)) * self.n_vertices());
        buf.extend_from_slice(BASIS_MAGIC);
        buf.extend_from_slice(&BASIS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_vertices() as u64).to_le_bytes());
        for t in [&self.mean, &self.id_basis, &self.exp_basis] {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads an `MGFB` file for the given topology. Loaded bases are only
    /// checked for finiteness, not orthonormality.
    pub fn load(path: &Path, topology: Arc<MeshTopology>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..4] != BASIS_MAGIC {
            return Err(Error::format(path, "missing MGFB magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != BASIS_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: BASIS_VERSION,
            });
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if n != topology.n_vertices {
            return Err(Error::format(
                path,
                format!(
                    "basis has {n} vertices, topology has {}",
                    topology.n_vertices
                ),
            ));
        }
        let expected = 16 + 8 * 3 * n * (1 + N_ID + N_EXP);
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let vals: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (mean, rest) = vals.split_at(3 * n);
        let (id, exp) = rest.split_at(3 * n * N_ID);
        FaceBasis::new(topology, mean.to_vec(), id.to_vec(), exp.to_vec())
    }
}

/// Deterministic synthetic basis on a sphere-like topology.
///
/// The mean is the reference sphere stretched into a head-shaped ellipsoid
/// with a nose bump on the +z (camera-facing) side; image y grows downward,
/// so the chin sits at +y. Basis fields are neighbourhood-smoothed Gaussian
/// noise, expression fields weighted toward the lower front of the face,
/// then jointly orthonormalized.
pub fn gen_synthetic_basis(seed: u64, topology: Arc<MeshTopology>) -> Result<FaceBasis> {
    let n = topology.n_vertices;
    let mut mean = Vec::with_capacity(3 * n);
    for p in &topology.reference {
        let [x, y, z] = *p;
        let nose = 0.18 * (-((x * x) / 0.02 + (y - 0.05).powi(2) / 0.06)).exp() * z.max(0.0);
        let chin = 1.0 - 0.12 * y.max(0.0).powi(2);
        mean.extend([0.55 * x * chin, 0.72 * y, 0.5 * z + nose]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fields: Vec<Vec<f64>> = Vec::with_capacity(N_ID + N_EXP);
    for k in 0..N_ID + N_EXP {
        let mut f: Vec<f64> = (0..3 * n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        smooth(&topology, &mut f, 6);
        if k >= N_ID {
            for (v, p) in topology.reference.iter().enumerate() {
                let w = 0.3 + (p[2].max(0.0)) * (0.5 + 0.5 * p[1].clamp(-1.0, 1.0)).max(0.2);
                for d in 0..3 {
                    f[3 * v + d] *= w;
                }
            }
        }
        fields.push(f);
    }
    orthonormalize(&mut fields)?;
    let id: Vec<f64> = fields[..N_ID].concat();
    let exp: Vec<f64> = fields[N_ID..].concat();
    FaceBasis::new(topology, mean, id, exp)
}

/// Repeated one-ring averaging (each vertex mixed half-and-half with the mean
/// of its neighbours).
fn smooth(topology: &MeshTopology, f: &mut [f64], iterations: usize) {
    let n = topology.n_vertices;
    let mut next = vec![0.0; f.len()];
    for _ in 0..iterations {
        for v in 0..n {
            let deg = topology.degree(v) as f64;
            let mut acc = [0.0; 3];
            for u in topology.neighbours(v) {
                for d in 0..3 {
                    acc[d] += f[3 * u + d];
                }
            }
            for d in 0..3 {
                next[3 * v + d] = 0.5 * f[3 * v + d] + 0.5 * acc[d] / deg;
            }
        }
        f.copy_from_slice(&next);
    }
}

/// Modified Gram-Schmidt, applied twice for orthogonality at roundoff level.
fn orthonormalize(fields: &mut [Vec<f64>]) -> Result<()> {
    for _pass in 0..2 {
        for i in 0..fields.len() {
            let (done, rest) = fields.split_at_mut(i);
            let f = &mut rest[0];
            for q in done.iter() {
                let d: f64 = f.iter().zip(q).map(|(a, b)| a * b).sum();
                f.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = f.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                return Err(Error::invalid(
                    "gen_synthetic_basis",
                    format!("field {i} is linearly dependent"),
                ));
            }
            f.iter_mut().for_each(|a| *a /= norm);
        }
    }
    Ok(())
}
