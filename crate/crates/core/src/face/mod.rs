//! Linear morphable face model: meshes from identity/expression coefficients,
//! an affine pose, and the source/driving mesh pair fed to the motion net.
//!
//! The driving mesh always carries the *source* identity. Only expression
//! and pose come from the driving frame, so a differently shaped driving face
//! cannot leak into the reenacted result.

mod basis;
mod icosphere;

use std::sync::Arc;

pub use basis::{gen_synthetic_basis, FaceBasis};
pub use icosphere::icosphere;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

pub const N_ID: usize = 50;
pub const N_EXP: usize = 51;
pub const N_POSE: usize = 12;
pub const N_COEFFS: usize = N_ID + N_EXP + N_POSE;

/// Fixed mesh connectivity shared by every face.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub n_vertices: usize,
    /// Symmetric binary adjacency with zero diagonal, induced by face edges.
    pub adjacency: SparseMatrix,
    pub faces: Vec<[usize; 3]>,
    /// Reference positions (unit sphere for icospheres) used to shape the mean face.
    pub reference: Vec<[f64; 3]>,
}

impl MeshTopology {
    pub fn from_faces(
        n_vertices: usize,
        faces: Vec<[usize; 3]>,
        reference: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if reference.len() != n_vertices {
            return Err(Error::shape(
                "topology",
                format!("{n_vertices} reference positions"),
                reference.len().to_string(),
            ));
        }
        let mut edges = std::collections::BTreeSet::new();
        for f in &faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if a >= n_vertices || b >= n_vertices {
                    return Err(Error::invalid(
                        "topology",
                        format!("face index out of range in {f:?}"),
                    ));
                }
                if a == b {
                    return Err(Error::invalid("topology", format!("degenerate face {f:?}")));
                }
                edges.insert((a, b));
                edges.insert((b, a));
            }
        }
        let adjacency = SparseMatrix::from_triplets(
            n_vertices,
            n_vertices,
            edges.into_iter().map(|(a, b)| (a, b, 1.0)).collect(),
            true,
        )?;
        Ok(MeshTopology {
            n_vertices,
            adjacency,
            faces,
            reference,
        })
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.row(v).count()
    }

    pub fn neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row(v).map(|(c, _)| c)
    }
}

/// Vertex positions `[n, 3]` on a fixed topology.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub topology: Arc<MeshTopology>,
    pub vertices: Tensor,
}

impl Mesh {
    pub fn new(topology: Arc<MeshTopology>, vertices: Tensor) -> Result<Self> {
        if vertices.shape() != [topology.n_vertices, 3] {
            return Err(Error::shape(
                "mesh",
                format!("[{}, 3]", topology.n_vertices),
                format!("{:?}", vertices.shape()),
            ));
        }
        Ok(Mesh { topology, vertices })
    }

    pub fn vertex(&self, v: usize) -> [f64; 3] {
        let d = self.vertices.data();
        [d[3 * v], d[3 * v + 1], d[3 * v + 2]]
    }
}

/// Source and driving vertices side by side: `[n, 6]`.
#[derive(Debug, Clone)]
pub struct StackedMesh {
    pub topology: Arc<MeshTopology>,
    pub features: Tensor,
}

impl StackedMesh {
    /// Splits back into the (source, driving) vertex sets.
    pub fn unstack(&self) -> Result<(Tensor, Tensor)> {
        Ok((
            self.features.narrow(1, 0, 3)?,
            self.features.narrow(1, 3, 3)?,
        ))
    }
}

/// Coefficient vector `c = (c_i, c_e, p)` of length 113.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub identity: Vec<f64>,
    pub expression: Vec<f64>,
    /// Row-major 3×4 affine `[R | t]`.
    pub pose: Vec<f64>,
}

pub const IDENTITY_POSE: [f64; 12] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

impl Coefficients {
    pub fn new(identity: Vec<f64>, expression: Vec<f64>, pose: Vec<f64>) -> Result<Self> {
        let c = Coefficients {
            identity,
            expression,
            pose,
        };
        c.validate()?;
        Ok(c)
    }

    /// Zero identity and expression with the identity pose.
    pub fn neutral() -> Self {
        Coefficients {
            identity: vec![0.0; N_ID],
            expression: vec![0.0; N_EXP],
            pose: IDENTITY_POSE.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v, n) in [
            ("identity", &self.identity, N_ID),
            ("expression", &self.expression, N_EXP),
            ("pose", &self.pose, N_POSE),
        ] {
            if v.len() != n {
                return Err(Error::shape(
                    "coefficients",
                    format!("{n} {name} values"),
                    v.len().to_string(),
                ));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("{name} coefficients"),
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Flat `[c_i | c_e | p]` layout.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(N_COEFFS);
        v.extend_from_slice(&self.identity);
        v.extend_from_slice(&self.expression);
        v.extend_from_slice(&self.pose);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_COEFFS {
            return Err(Error::shape(
                "coefficients",
                N_COEFFS.to_string(),
                v.len().to_string(),
            ));
        }
        Coefficients::new(
            v[..N_ID].to_vec(),
            v[N_ID..N_ID + N_EXP].to_vec(),
            v[N_ID + N_EXP..].to_vec(),
        )
    }

    pub fn identity_tensor(&self) -> Tensor {
        Tensor::new(self.identity.clone(), &[N_ID]).expect("validated length")
    }

    pub fn expression_tensor(&self) -> Tensor {
        Tensor::new(self.expression.clone(), &[N_EXP]).expect("validated length")
    }

    pub fn pose_tensor(&self) -> Tensor {
        Tensor::new(self.pose.clone(), &[N_POSE]).expect("validated length")
    }
}

/// Vertices `V_mean + Σ c_i[k] V_id[k] + Σ c_e[k] V_exp[k]` as `[n, 3]`;
/// differentiable in both coefficient tensors.
pub fn reconstruct(basis: &FaceBasis, c_i: &Tensor, c_e: &Tensor) -> Result<Tensor> {
    if c_i.numel() != N_ID || c_e.numel() != N_EXP {
        return Err(Error::shape(
            "reconstruct",
            format!("{N_ID} identity and {N_EXP} expression coefficients"),
            format!("{} and {}", c_i.numel(), c_e.numel()),
        ));
    }
    let n = basis.n_vertices();
    let id = c_i.reshape(&[1, N_ID])?.matmul(basis.id_matrix())?;
    let ex = c_e.reshape(&[1, N_EXP])?.matmul(basis.exp_matrix())?;
    basis.mean().add(&id.add(&ex)?.reshape(&[n, 3])?)
}

/// `v' = R v + t` per vertex, reading `p` row-major as `[R | t]`.
pub fn apply_pose(vertices: &Tensor, p: &Tensor) -> Result<Tensor> {
    if p.numel() != N_POSE || vertices.ndim() != 2 || vertices.shape()[1] != 3 {
        return Err(Error::shape(
            "apply_pose",
            "[n, 3] vertices and 12 pose values",
            format!("{:?} and {}", vertices.shape(), p.numel()),
        ));
    }
    if let Some(i) = p.first_non_finite() {
        return Err(Error::NonFinite {
            what: "pose".into(),
            index: i,
        });
    }
    let rt = p.reshape(&[3, 4])?;
    let r = rt.narrow(1, 0, 3)?;
    let t = rt.narrow(1, 3, 1)?.reshape(&[1, 3])?;
    vertices.matmul(&r.transpose()?)?.add(&t)
}

/// Posed mesh from full coefficients.
pub fn mesh_from(basis: &FaceBasis, c: &Coefficients) -> Result<Mesh> {
    c.validate()?;
    let v = reconstruct(basis, &c.identity_tensor(), &c.expression_tensor())?;
    Mesh::new(basis.topology.clone(), apply_pose(&v, &c.pose_tensor())?)
}

/// `(M_s, M_d)`: the driving mesh uses the source identity with the driving
/// expression and pose. Driving identity coefficients are never read.
pub fn build_pair(
    source: &Coefficients,
    driving: &Coefficients,
    basis: &FaceBasis,
) -> Result<(Mesh, Mesh)> {
    source.validate()?;
    driving.validate()?;
    let ci = source.identity_tensor();
    let ms = apply_pose(
        &reconstruct(basis, &ci, &source.expression_tensor())?,
        &source.pose_tensor(),
    )?;
    let md = apply_pose(
        &reconstruct(basis, &ci, &driving.expression_tensor())?,
        &driving.pose_tensor(),
    )?;
    Ok((
        Mesh::new(basis.topology.clone(), ms)?,
        Mesh::new(basis.topology.clone(), md)?,
    ))
}

/// Tensor form of [`build_pair`], differentiable in every coefficient.
pub fn build_pair_tensors(
    basis: &FaceBasis,
    source_id: &Tensor,
    source_exp: &Tensor,
    source_pose: &Tensor,
    driving_exp: &Tensor,
    driving_pose: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let ms = apply_pose(&reconstruct(basis, source_id, source_exp)?, source_pose)?;
    let md = apply_pose(&reconstruct(basis, source_id, driving_exp)?, driving_pose)?;
    Ok((ms, md))
}

/// Features `[n, 6]` = source xyz then driving xyz.
pub fn stack(source: &Mesh, driving: &Mesh) -> Result<StackedMesh> {
    if !Arc::ptr_eq(&source.topology, &driving.topology) && source.topology != driving.topology {
        return Err(Error::invalid("stack", "meshes have different topologies"));
    }
    Ok(StackedMesh {
        topology: source.topology.clone(),
        features: Tensor::concat(&[source.vertices.clone(), driving.vertices.clone()], 1)?,
    })
}

/// Blends expression and pose linearly in `alpha`; identity stays the source's.
pub fn interpolate_params(
    source: &Coefficients,
    driving: &Coefficients,
    alpha: f64,
) -> Result<Coefficients> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(
            "interpolate_params",
            format!("alpha {alpha} outside [0, 1]"),
        ));
    }
    let lerp = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
            .collect()
    };
    // Endpoints are copied so they are exact regardless of rounding.
    let (expression, pose) = if alpha == 0.0 {
        (source.expression.clone(), source.pose.clone())
    } else if alpha == 1.0 {
        (driving.expression.clone(), driving.pose.clone())
    } else {
        (
            lerp(&source.expression, &driving.expression),
            lerp(&source.pose, &driving.pose),
        )
    };
    Coefficients::new(source.identity.clone(), expression, pose)
}

/// Which driving components a disentangled reenactment takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveMode {
    Pose,
    Expression,
    Both,
}

impl std::str::FromStr for DriveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pose" => Ok(DriveMode::Pose),
            "expression" => Ok(DriveMode::Expression),
            "both" => Ok(DriveMode::Both),
            other => Err(Error::invalid(
                "mode",
                format!("`{other}` is not one of pose, expression, both"),
            )),
        }
    }
}

/// Driving coefficients for a disentangled reenactment: the selected
/// components from `driving`, everything else from `source`.
pub fn disentangled_driving(
    source: &Coefficients,
    driving: &Coefficients,
    mode: DriveMode,
) -> Coefficients {
    match mode {
        DriveMode::Pose => Coefficients {
            identity: source.identity.clone(),
            expression: source.expression.clone(),
            pose: driving.pose.clone(),
        },
        DriveMode::Expression => Coefficients {
            identity: source.identity.clone(),
            expression: driving.expression.clone(),
            pose: source.pose.clone(),
        },
        DriveMode::Both => driving.clone(),
    }
}
