//! Quadric-error edge collapse producing vertex-selection pooling between
//! encoder stages.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::face::MeshTopology;
use crate::tensor::{SparseMatrix, Tensor};

/// `m × n` row selection: row `r` picks fine vertex `kept[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMatrix {
    pub fine: usize,
    pub kept: Arc<Vec<usize>>,
}

impl SamplingMatrix {
    pub fn identity(n: usize) -> Self {
        SamplingMatrix {
            fine: n,
            kept: Arc::new((0..n).collect()),
        }
    }

    pub fn rows(&self) -> usize {
        self.kept.len()
    }

    pub fn cols(&self) -> usize {
        self.fine
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        let entries = self
            .kept
            .iter()
            .enumerate()
            .map(|(r, &c)| (r, c, 1.0))
            .collect();
        SparseMatrix::from_triplets(self.rows(), self.fine, entries, false)
            .expect("valid selection")
    }
}

/// One coarsening step: the coarse topology, the selection from the parent,
/// and the coarse vertex positions used for the next step's quadrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecimationLevel {
    pub topology: Arc<MeshTopology>,
    pub sampling: SamplingMatrix,
    pub positions: Vec<[f64; 3]>,
}

type Quadric = [f64; 10];

fn plane_quadric(p: [f64; 3], q: [f64; 3], r: [f64; 3]) -> Option<Quadric> {
    let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len == 0.0 {
        return None;
    }
    let (a, b, c) = (n[0] / len, n[1] / len, n[2] / len);
    let d = -(a * p[0] + b * p[1] + c * p[2]);
    Some([
        a * a,
        a * b,
        a * c,
        a * d,
        b * b,
        b * c,
        b * d,
        c * c,
        c * d,
        d * d,
    ])
}

fn quadric_cost(q: &Quadric, v: [f64; 3]) -> f64 {
    let [x, y, z] = v;
    q[0] * x * x
        + 2.0 * q[1] * x * y
        + 2.0 * q[2] * x * z
        + 2.0 * q[3] * x
        + q[4] * y * y
        + 2.0 * q[5] * y * z
        + 2.0 * q[6] * y
        + q[7] * z * z
        + 2.0 * q[8] * z
        + q[9]
}

fn bfs_connected(n: usize, adj: &[BTreeSet<usize>]) -> bool {
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count == n
}

/// Collapses minimum-cost edges into their lower-indexed endpoint until
/// `⌈keep_ratio·n⌉` vertices remain. Ties break on (cost, lower index,
/// higher index). Quadrics come from `positions`, which stay fixed.
pub fn qem_decimate(
    topology: &MeshTopology,
    positions: &[[f64; 3]],
    keep_ratio: f64,
) -> Result<DecimationLevel> {
    let n = topology.n_vertices;
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::invalid(
            "qem_decimate",
            format!("keep_ratio {keep_ratio} outside (0, 1]"),
        ));
    }
    if positions.len() != n {
        return Err(Error::shape(
            "qem_decimate",
            format!("{n} positions"),
            positions.len().to_string(),
        ));
    }
    let target = ((keep_ratio * n as f64).ceil() as usize).clamp(1, n);

    let mut adj: Vec<BTreeSet<usize>> = (0..n).map(|v| topology.neighbours(v).collect()).collect();
    if !bfs_connected(n, &adj) {
        return Err(Error::invalid(
            "qem_decimate",
            "input topology is not connected",
        ));
    }
    let mut quadrics: Vec<Quadric> = vec![[0.0; 10]; n];
    for f in &topology.faces {
        if let Some(q) = plane_quadric(positions[f[0]], positions[f[1]], positions[f[2]]) {
            for &v in f {
                quadrics[v].iter_mut().zip(&q).for_each(|(a, b)| *a += b);
            }
        }
    }
    let mut alive = vec![true; n];
    // Each fine vertex maps to the surviving vertex it was merged into.
    let mut owner: Vec<usize> = (0..n).collect();
    let mut remaining = n;
    while remaining > target {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if !alive[a] {
                continue;
            }
            for &b in adj[a].range(a + 1..) {
                let mut q = quadrics[a];
                q.iter_mut().zip(&quadrics[b]).for_each(|(x, y)| *x += y);
                let cost = quadric_cost(&q, positions[a]);
                let better = match best {
                    None => true,
                    Some((c, ba, bb)) => {
                        cost.total_cmp(&c).then(a.cmp(&ba)).then(b.cmp(&bb)).is_lt()
                    }
                };
                if better {
                    best = Some((cost, a, b));
                }
            }
        }
        let (_, keep, drop) =
            best.expect("a connected graph with more than one vertex has an edge");
        let moved: Vec<usize> = adj[drop].iter().copied().collect();
        for u in moved {
            adj[u].remove(&drop);
            if u != keep {
                adj[u].insert(keep);
                adj[keep].insert(u);
            }
        }
        adj[drop].clear();
        let qd = quadrics[drop];
        quadrics[keep]
            .iter_mut()
            .zip(&qd)
            .for_each(|(x, y)| *x += y);
        alive[drop] = false;
        for o in owner.iter_mut() {
            if *o == drop {
                *o = keep;
            }
        }
        remaining -= 1;
    }

    let kept: Vec<usize> = (0..n).filter(|&v| alive[v]).collect();
    let mut coarse_index = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        coarse_index[v] = i;
    }
    let mut edges = Vec::new();
    for &v in &kept {
        for &u in &adj[v] {
            edges.push((coarse_index[v], coarse_index[u], 1.0));
        }
    }
    let adjacency = SparseMatrix::from_triplets(kept.len(), kept.len(), edges, true)?;
    let mut face_set = BTreeSet::new();
    let mut faces = Vec::new();
    for f in &topology.faces {
        let g = f.map(|v| coarse_index[owner[v]]);
        if g[0] == g[1] || g[1] == g[2] || g[0] == g[2] {
            continue;
        }
        let mut key = g;
        key.sort_unstable();
        if face_set.insert(key) {
            faces.push(g);
        }
    }
    let coarse_positions: Vec<[f64; 3]> = kept.iter().map(|&v| positions[v]).collect();
    let coarse = MeshTopology {
        n_vertices: kept.len(),
        adjacency,
        faces,
        reference: kept.iter().map(|&v| topology.reference[v]).collect(),
    };
    Ok(DecimationLevel {
        topology: Arc::new(coarse),
        sampling: SamplingMatrix {
            fine: n,
            kept: Arc::new(kept),
        },
        positions: coarse_positions,
    })
}

/// Successive decimations from a root topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshHierarchy {
    pub root: Arc<MeshTopology>,
    pub levels: Vec<DecimationLevel>,
}

impl MeshHierarchy {
    pub fn build(
        root: Arc<MeshTopology>,
        positions: &[[f64; 3]],
        keep_ratio: f64,
        depth: usize,
    ) -> Result<Self> {
        let mut levels: Vec<DecimationLevel> = Vec::with_capacity(depth);
        for _ in 0..depth {
            let (topo, pos) = match levels.last() {
                Some(l) => (l.topology.clone(), l.positions.clone()),
                None => (root.clone(), positions.to_vec()),
            };
            levels.push(qem_decimate(&topo, &pos, keep_ratio)?);
        }
        Ok(MeshHierarchy { root, levels })
    }

    /// Topology at stage `i` (0 is the root).
    pub fn topology(&self, i: usize) -> &Arc<MeshTopology> {
        if i == 0 {
            &self.root
        } else {
            &self.levels[i - 1].topology
        }
    }

    /// Vertex counts from the root down.
    pub fn vertex_counts(&self) -> Vec<usize> {
        std::iter::once(self.root.n_vertices)
            .chain(self.levels.iter().map(|l| l.topology.n_vertices))
            .collect()
    }
}

/// `Q · features`: keeps the selected rows.
pub fn pool(q: &SamplingMatrix, features: &Tensor) -> Result<Tensor> {
    if features.ndim() != 2 || features.shape()[0] != q.cols() {
        return Err(Error::shape(
            "pool",
            format!("[{}, C]", q.cols()),
            format!("{:?}", features.shape()),
        ));
    }
    features.select_rows(&q.kept)
}
