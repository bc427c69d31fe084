//! Oracle suite: every check compares a production path against an
//! independent reference and reports the measured discrepancy.

use std::cell::RefCell;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::{Generator, Model};
use crate::error::Result;
use crate::face::{
    build_pair, gen_synthetic_basis, icosphere, reconstruct, Coefficients, FaceBasis, MeshTopology,
    N_EXP, N_ID,
};
use crate::graph::oracle::{cheb_filter, eigenvalues, laplacian_dense, to_dense};
use crate::graph::{
    chebyshev_operator, instance_norm_graph, normalized_laplacian, ChebConv, Recurrence,
    SpectralResidualBlock,
};
use crate::losses::{gradient_penalty, Critic, LAMBDA_GP};
use crate::motion::{MotionConfig, MotionNet};
use crate::nn::Module;
use crate::reenact::{OcclusionNet, ReenactConfig, ReenactNet};
use crate::sampling::{qem_decimate, MeshHierarchy};
use crate::tensor::{
    apply, grad_check, grad_check_sampled, no_grad, GradCheckReport, OpAttrs, SparseMatrix, Tensor,
};

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {} ({:.2} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t0 = Instant::now();
    let v = f()?;
    Ok((v, t0.elapsed().as_secs_f64()))
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new(v, shape).expect("nonzero dims")
}

/// Random connected simple graph: a random spanning tree plus each other
/// edge with probability `p`.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SparseMatrix {
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.insert((u, v));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.insert((a, b));
            }
        }
    }
    let entries = edges
        .iter()
        .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
        .collect();
    SparseMatrix::from_triplets(n, n, entries, true).expect("valid simple graph")
}

/// Random triangulated `rows × cols` grid with random diagonals, positions
/// jittered in the plane.
pub fn random_grid_mesh(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> MeshTopology {
    let idx = |r: usize, c: usize| r * cols + c;
    let mut faces = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (a, b, d, e) = (idx(r, c), idx(r, c + 1), idx(r + 1, c), idx(r + 1, c + 1));
            if rng.random_bool(0.5) {
                faces.push([a, b, e]);
                faces.push([a, e, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, e, d]);
            }
        }
    }
    let reference = (0..rows * cols)
        .map(|v| {
            let (r, c) = (v / cols, v % cols);
            [
                c as f64 + rng.random_range(-0.2..0.2),
                r as f64 + rng.random_range(-0.2..0.2),
                0.0,
            ]
        })
        .collect();
    MeshTopology::from_faces(rows * cols, faces, reference).expect("grid faces are valid")
}

/// Largest `|y − y_oracle| / max|y_oracle|` of a K = 3 Chebyshev layer over
/// `graphs` random connected graphs of 2 to 30 vertices.
pub fn spectral_oracle_error(graphs: usize, seed: u64, recurrence: Recurrence) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..graphs {
        let n = rng.random_range(2..=30);
        let p = rng.random_range(0.05..0.4);
        let adj = random_connected_graph(&mut rng, n, p);
        let l = chebyshev_operator(&adj)?;
        let (c_in, c_out) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let mut layer = ChebConv::new(&mut rng, 3, c_in, c_out);
        layer.bias = randn(&mut rng, &[c_out], 1.0);
        layer.recurrence = recurrence;
        let x = randn(&mut rng, &[n, c_in], 1.0);
        let y = layer.forward(&l, &x)?;
        let reference = cheb_filter(
            &l,
            layer.theta.data(),
            layer.bias.data(),
            3,
            c_in,
            c_out,
            x.data(),
        );
        let scale = reference
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let err = y
            .data()
            .iter()
            .zip(&reference)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    Ok(worst)
}

/// Worst-case measurements of the Laplacian invariants.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaplacianReport {
    pub meshes: usize,
    pub max_asymmetry: f64,
    pub max_diagonal_deviation: f64,
    pub max_entry_deviation: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// `max |L · D^{1/2} 1|`.
    pub max_null_residual: f64,
}

/// Random meshes: triangulated grids, decimated icospheres and randomly
/// relabelled icospheres.
pub fn random_meshes(count: usize, seed: u64) -> Result<Vec<MeshTopology>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mesh = match i % 3 {
            0 => {
                let (r, c) = (rng.random_range(2..=6), rng.random_range(2..=6));
                random_grid_mesh(&mut rng, r, c)
            }
            1 => {
                let t = icosphere(rng.random_range(0..=2));
                let ratio = rng.random_range(0.3..=1.0);
                let pos = t.reference.clone();
                (*qem_decimate(&t, &pos, ratio)?.topology).clone()
            }
            _ => {
                let t = icosphere(rng.random_range(0..=1));
                let n = t.n_vertices;
                let mut perm: Vec<usize> = (0..n).collect();
                for k in (1..n).rev() {
                    perm.swap(k, rng.random_range(0..=k));
                }
                let faces = t.faces.iter().map(|f| f.map(|v| perm[v])).collect();
                let mut reference = vec![[0.0; 3]; n];
                for v in 0..n {
                    reference[perm[v]] = t.reference[v];
                }
                MeshTopology::from_faces(n, faces, reference)?
            }
        };
        out.push(mesh);
    }
    Ok(out)
}

pub fn laplacian_suite(count: usize, seed: u64) -> Result<LaplacianReport> {
    let mut r = LaplacianReport {
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        ..Default::default()
    };
    for mesh in random_meshes(count, seed)? {
        let l = normalized_laplacian(&mesh.adjacency)?;
        let dense = to_dense(&l);
        let oracle = laplacian_dense(&mesh.adjacency);
        let n = mesh.n_vertices;
        for i in 0..n {
            r.max_diagonal_deviation = r.max_diagonal_deviation.max((dense[(i, i)] - 1.0).abs());
            for j in 0..n {
                r.max_asymmetry = r.max_asymmetry.max((dense[(i, j)] - dense[(j, i)]).abs());
                r.max_entry_deviation = r
                    .max_entry_deviation
                    .max((dense[(i, j)] - oracle[(i, j)]).abs());
            }
        }
        let ev = eigenvalues(&l);
        r.min_eigenvalue = r.min_eigenvalue.min(ev[0]);
        r.max_eigenvalue = r.max_eigenvalue.max(ev[n - 1]);
        let d_half: Vec<f64> = (0..n).map(|v| (mesh.degree(v) as f64).sqrt()).collect();
        for (row, _) in d_half.iter().enumerate() {
            let s: f64 = l.row(row).map(|(c, v)| v * d_half[c]).sum();
            r.max_null_residual = r.max_null_residual.max(s.abs());
        }
        r.meshes += 1;
    }
    Ok(r)
}

/// Face-model algebra on the desk basis.
#[derive(Debug, Clone, Copy)]
pub struct AlgebraReport {
    pub zero_is_mean: bool,
    pub linearity_error: f64,
    pub driving_identity_invariant: bool,
}

pub fn face_algebra(basis: &FaceBasis, seed: u64) -> Result<AlgebraReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = reconstruct(basis, &Tensor::zeros(&[N_ID]), &Tensor::zeros(&[N_EXP]))?;
    let zero_is_mean = zero.data() == basis.mean().data();
    let mut linearity_error: f64 = 0.0;
    for _ in 0..10 {
        let (ci, ce) = (
            randn(&mut rng, &[N_ID], 1.0),
            randn(&mut rng, &[N_EXP], 1.0),
        );
        let (di, de) = (
            randn(&mut rng, &[N_ID], 1.0),
            randn(&mut rng, &[N_EXP], 1.0),
        );
        let lhs = reconstruct(basis, &ci.add(&di)?, &ce.add(&de)?)?.add(basis.mean())?;
        let rhs = reconstruct(basis, &ci, &ce)?.add(&reconstruct(basis, &di, &de)?)?;
        let err = lhs
            .data()
            .iter()
            .zip(rhs.data())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        linearity_error = linearity_error.max(err);
    }
    let mut invariant = true;
    for _ in 0..10 {
        let coeffs = |rng: &mut ChaCha8Rng| {
            let mut pose = crate::face::IDENTITY_POSE.to_vec();
            pose.iter_mut()
                .for_each(|p| *p += rng.random_range(-0.3..0.3));
            Coefficients::new(
                (0..N_ID).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..N_EXP).map(|_| rng.random_range(-1.0..1.0)).collect(),
                pose,
            )
        };
        let src = coeffs(&mut rng)?;
        let drv = coeffs(&mut rng)?;
        let mut other = drv.clone();
        other
            .identity
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-2.0..2.0));
        let (_, md) = build_pair(&src, &drv, basis)?;
        let (_, md2) = build_pair(&src, &other, basis)?;
        invariant &= md.vertices.data() == md2.vertices.data();
    }
    Ok(AlgebraReport {
        zero_is_mean,
        linearity_error,
        driving_identity_invariant: invariant,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct WarpReport {
    pub zero_flow_exact: bool,
    pub shift_error: f64,
    pub linearity_error: f64,
}

/// Border-clamped shift of `[B, C, H, W]` by `dx` pixels to the left.
pub fn shift_oracle(x: &Tensor, dx: isize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for bc in 0..s[0] * s[1] {
        for i in 0..h {
            for j in 0..w {
                let src = (j as isize + dx).clamp(0, w as isize - 1) as usize;
                out[(bc * h + i) * w + j] = d[(bc * h + i) * w + src];
            }
        }
    }
    Tensor::new(out, s).expect("same shape")
}

pub fn warp_oracles(seed: u64) -> Result<WarpReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zero_flow_exact = true;
    let mut shift_error: f64 = 0.0;
    let mut linearity_error: f64 = 0.0;
    for &(b, c, h, w) in &[(1, 3, 16, 16), (2, 5, 9, 13), (1, 1, 32, 8)] {
        let x = randn(&mut rng, &[b, c, h, w], 1.0);
        let y = randn(&mut rng, &[b, c, h, w], 1.0);
        zero_flow_exact &= x.grid_sample(&Tensor::zeros(&[b, 2, h, w]))?.data() == x.data();
        let mut f = vec![0.0; b * 2 * h * w];
        for bi in 0..b {
            f[bi * 2 * h * w..bi * 2 * h * w + h * w].fill(2.0 / w as f64);
        }
        let shift = Tensor::new(f, &[b, 2, h, w])?;
        let err = x
            .grid_sample(&shift)?
            .data()
            .iter()
            .zip(shift_oracle(&x, 1).data())
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        shift_error = shift_error.max(err);
        let flow = randn(&mut rng, &[b, 2, h, w], 0.5);
        let (a1, a2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let lhs = x.scale(a1).add(&y.scale(a2))?.grid_sample(&flow)?;
        let rhs = x
            .grid_sample(&flow)?
            .scale(a1)
            .add(&y.grid_sample(&flow)?.scale(a2))?;
        let err = lhs
            .data()
            .iter()
            .zip(rhs.data())
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        linearity_error = linearity_error.max(err);
    }
    Ok(WarpReport {
        zero_flow_exact,
        shift_error,
        linearity_error,
    })
}

/// `D(x) = ⟨w, x⟩` per sample.
pub struct LinearCritic {
    pub w: Tensor,
}

impl Critic for LinearCritic {
    fn score(&self, image: &Tensor) -> Result<Tensor> {
        let b = image.shape()[0];
        image
            .mul(&self.w)?
            .reshape(&[b, image.numel() / b])?
            .sum_to(&[b, 1])
    }
}

/// `D(x) = c` for every input.
pub struct ConstantCritic(pub f64);

impl Critic for ConstantCritic {
    fn score(&self, image: &Tensor) -> Result<Tensor> {
        Ok(Tensor::full(&[image.shape()[0], 1], self.0))
    }
}

/// `(penalty of a unit-norm linear critic, λ_gp · penalty of a constant critic)`.
pub fn gp_analytic(seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [1, 3, 8, 8];
    let w = randn(&mut rng, &shape, 1.0);
    let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let w = w.scale(1.0 / norm);
    let points = randn(&mut rng, &[4, 3, 8, 8], 1.0);
    let linear = gradient_penalty(&LinearCritic { w }, &points)?.item()?;
    let constant = gradient_penalty(&ConstantCritic(0.7), &points)?.item()? * LAMBDA_GP;
    Ok((linear, constant))
}

/// Flow of an untrained desk model and whether warping with it is the identity.
pub fn init_invariant(basis: &FaceBasis, config: &TrainConfig, seed: u64) -> Result<(bool, bool)> {
    let model = Model::for_basis(config.clone(), basis)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = |rng: &mut ChaCha8Rng| {
        let mut x = Coefficients::neutral();
        x.identity
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
        x.expression
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
        x.pose[3] = rng.random_range(-0.2..0.2);
        x
    };
    let (s, d) = (c(&mut rng), c(&mut rng));
    let pairs = [
        Generator::stacked_input(basis, &s, &s)?,
        Generator::stacked_input(basis, &s, &d)?,
    ];
    let flow = model.generator.motion.forward_features(&pairs)?;
    let zero = flow.data().iter().all(|v| *v == 0.0);
    let size = config.image_size;
    let image = Tensor::new(
        (0..2 * 3 * size * size)
            .map(|_| rng.random_range(0.0..1.0))
            .collect(),
        &[2, 3, size, size],
    )?;
    let identity = image.grid_sample(&flow)?.data() == image.data();
    Ok((zero, identity))
}

/// Grad-checks the random projection `Σ w ⊙ (y − y₀)` of the output
/// `y = f(module, extra)` with respect to every parameter of the module
/// (sampled) and the extra inputs. `y₀` is the output at the unperturbed
/// point; subtracting it leaves every gradient unchanged while keeping the
/// probed value near zero, so central differences lose fewer digits.
pub fn module_grad_check<M: Module>(
    module: M,
    extra: Vec<Tensor>,
    per_input: usize,
    seed: u64,
    f: impl Fn(&M, &[Tensor]) -> Result<Tensor>,
) -> Result<GradCheckReport> {
    let cell = RefCell::new(module);
    let mut inputs = Vec::new();
    cell.borrow_mut()
        .visit("", &mut |_, t| inputs.push(t.clone()));
    let np = inputs.len();
    inputs.extend(extra);
    let y0 = no_grad(|| f(&cell.borrow(), &inputs[np..]))?.detach();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = randn(&mut rng, y0.shape(), 1.0);
    grad_check_sampled(
        |args: &[Tensor]| {
            let mut m = cell.borrow_mut();
            let mut k = 0;
            m.visit("", &mut |_, t| {
                *t = args[k].clone();
                k += 1;
            });
            Ok(f(&m, &args[np..])?.sub(&y0)?.mul(&w)?.sum())
        },
        &inputs,
        1e-6,
        per_input,
    )
}

/// Fixed random projection `Σ w ⊙ y`, so every output entry matters.
fn probe(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = randn(&mut rng, y.shape(), 1.0);
    Ok(y.mul(&w)?.sum())
}

/// Adds uniform noise to every parameter. Zero-initialized biases and the
/// zeroed flow head otherwise put ReLU inputs and bilinear sample positions
/// exactly on their kinks, where no finite difference is meaningful.
fn jitter(module: &mut dyn Module, rng: &mut ChaCha8Rng, scale: f64) {
    module.visit("", &mut |_, t| {
        let noisy = t.add(&randn(rng, t.shape(), scale)).expect("same shape");
        *t = noisy.detach().requires_grad();
    });
}

fn tiny_motion(rng: &mut ChaCha8Rng) -> Result<(MotionNet, Arc<FaceBasis>)> {
    let topology = Arc::new(icosphere(1));
    let basis = Arc::new(gen_synthetic_basis(5, topology.clone())?);
    let cfg = MotionConfig {
        image_size: 8,
        latent_dim: 6,
        encoder_channels: vec![6, 4, 4, 5, 5],
        cheb_order: 3,
        keep_ratio: 0.5,
        seed_channels: 8,
        flow_scale: 0.1,
        flow_limit: 0.5,
    };
    let pos: Vec<[f64; 3]> = basis
        .mean()
        .data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let h = Arc::new(MeshHierarchy::build(
        topology,
        &pos,
        cfg.keep_ratio,
        cfg.pool_levels(),
    )?);
    let mut net = MotionNet::new(rng, &cfg, h)?;
    jitter(&mut net, rng, 0.05);
    Ok((net, basis))
}

fn tiny_reenact(rng: &mut ChaCha8Rng) -> Result<ReenactNet> {
    ReenactNet::new(
        rng,
        &ReenactConfig {
            image_size: 8,
            encoder_channels: vec![4, 8],
            hourglass_channels: vec![3, 4, 5],
            decoder_res_blocks: 1,
        },
    )
}

/// Named gradient checks of every primitive and composed subnetwork.
pub fn gradient_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(String, GradCheckReport)> = Vec::new();
    let eps = 1e-6;

    // Elementwise and structural primitives through the generic op interface.
    let a = randn(&mut rng, &[3, 4], 1.0);
    let b = randn(&mut rng, &[3, 4], 1.0);
    let pos = a.abs().add_scalar(0.5);
    let far = |t: &Tensor| {
        Tensor::new(
            t.data()
                .iter()
                .map(|v| if v.abs() < 0.05 { v + 0.1 } else { *v })
                .collect(),
            t.shape(),
        )
    };
    let a = far(&a)?;
    let attrs = OpAttrs::default();
    for kind in ["add", "sub", "mul", "div"] {
        let second = if kind == "div" {
            pos.clone()
        } else {
            b.clone()
        };
        let r = grad_check(
            |x| probe(&apply(kind, &[x[0].clone(), x[1].clone()], &attrs)?, 1),
            &[a.clone(), second],
            eps,
        )?;
        out.push((kind.to_string(), r));
    }
    for kind in ["neg", "relu", "sigmoid", "abs", "square"] {
        let r = grad_check(
            |x| probe(&apply(kind, &[x[0].clone()], &attrs)?, 2),
            &[a.clone()],
            eps,
        )?;
        out.push((kind.to_string(), r));
    }
    out.push((
        "sqrt".into(),
        grad_check(|x| probe(&x[0].sqrt()?, 3), &[pos.clone()], eps)?,
    ));
    out.push((
        "leaky_relu".into(),
        grad_check(|x| probe(&x[0].leaky_relu(0.2), 3), &[a.clone()], eps)?,
    ));
    out.push((
        "scale".into(),
        grad_check(
            |x| probe(&x[0].scale(-1.7).add_scalar(0.3), 3),
            &[a.clone()],
            eps,
        )?,
    ));
    let m = randn(&mut rng, &[4, 5], 1.0);
    out.push((
        "matmul".into(),
        grad_check(|x| probe(&x[0].matmul(&x[1])?, 4), &[a.clone(), m], eps)?,
    ));
    out.push((
        "transpose".into(),
        grad_check(|x| probe(&x[0].transpose()?, 4), &[a.clone()], eps)?,
    ));
    out.push((
        "sum".into(),
        grad_check(|x| Ok(x[0].sum().scale(0.3)), &[a.clone()], eps)?,
    ));
    out.push((
        "mean".into(),
        grad_check(|x| Ok(x[0].mean().square()), &[a.clone()], eps)?,
    ));
    out.push((
        "mean_to".into(),
        grad_check(|x| probe(&x[0].mean_to(&[1, 4])?, 5), &[a.clone()], eps)?,
    ));
    out.push((
        "broadcast".into(),
        grad_check(
            |x| probe(&x[0].broadcast_to(&[2, 3, 4])?, 5),
            &[a.clone()],
            eps,
        )?,
    ));
    out.push((
        "reshape".into(),
        grad_check(|x| probe(&x[0].reshape(&[2, 6])?, 5), &[a.clone()], eps)?,
    ));
    out.push((
        "concat".into(),
        grad_check(
            |x| probe(&Tensor::concat(&[x[0].clone(), x[1].clone()], 1)?, 6),
            &[a.clone(), b.clone()],
            eps,
        )?,
    ));
    out.push((
        "narrow".into(),
        grad_check(|x| probe(&x[0].narrow(1, 1, 2)?, 6), &[a.clone()], eps)?,
    ));
    let adj = Arc::new(random_connected_graph(&mut rng, 3, 0.5));
    out.push((
        "spmm".into(),
        grad_check(|x| probe(&x[0].spmm(&adj)?, 7), &[a.clone()], eps)?,
    ));
    let idx = Arc::new(vec![2, 0]);
    out.push((
        "select_rows".into(),
        grad_check(|x| probe(&x[0].select_rows(&idx)?, 7), &[a.clone()], eps)?,
    ));
    let img = randn(&mut rng, &[2, 3, 6, 6], 1.0);
    for stride in [1, 2] {
        let w = randn(&mut rng, &[4, 3, 3, 3], 0.5);
        let r = grad_check(
            |x| probe(&x[0].conv2d(&x[1], stride)?, 8),
            &[img.clone(), w],
            eps,
        )?;
        out.push((format!("conv2d stride {stride}"), r));
    }
    out.push((
        "upsample2x".into(),
        grad_check(|x| probe(&x[0].upsample2x()?, 9), &[img.clone()], eps)?,
    ));
    out.push((
        "avg_pool2x".into(),
        grad_check(|x| probe(&x[0].avg_pool2x()?, 9), &[img.clone()], eps)?,
    ));
    let flow = randn(&mut rng, &[2, 2, 6, 6], 0.4);
    out.push((
        "grid_sample".into(),
        grad_check(
            |x| probe(&x[0].grid_sample(&x[1])?, 10),
            &[img.clone(), flow],
            eps,
        )?,
    ));
    let feats = randn(&mut rng, &[7, 3], 1.0);
    let (sc, sh) = (randn(&mut rng, &[3], 1.0), randn(&mut rng, &[3], 1.0));
    out.push((
        "instance_norm".into(),
        grad_check(
            |x| probe(&instance_norm_graph(&x[0], &x[1], &x[2])?, 11),
            &[feats, sc, sh],
            eps,
        )?,
    ));

    // Composed subnetworks.
    let g = random_connected_graph(&mut rng, 12, 0.3);
    let l = chebyshev_operator(&g)?;
    let x = randn(&mut rng, &[12, 3], 1.0);
    let mut block = SpectralResidualBlock::new(&mut rng, 3, 3, 4);
    jitter(&mut block, &mut rng, 0.05);
    out.push((
        "residual block".into(),
        module_grad_check(block, vec![x], usize::MAX, 12, |m, e| m.forward(&l, &e[0]))?,
    ));

    let (motion, basis) = tiny_motion(&mut rng)?;
    let n = basis.n_vertices();
    let stacked = randn(&mut rng, &[n, 6], 1.0);
    out.push((
        "motion net".into(),
        module_grad_check(motion, vec![stacked], 8, 13, |m, e| {
            m.forward_features(&[e[0].clone()])
        })?,
    ));

    let mut occ = OcclusionNet::new(&mut rng, &[3, 4, 4, 5]);
    jitter(&mut occ, &mut rng, 0.05);
    let warped = randn(&mut rng, &[1, 3, 16, 16], 1.0).abs();
    out.push((
        "occlusion net".into(),
        module_grad_check(occ, vec![warped], 8, 14, |m, e| {
            let o = m.forward(&e[0])?;
            Tensor::concat(&[o.occlusion, o.mask], 1)
        })?,
    ));

    // Full generator: coefficients → meshes → flow → reenacted image.
    let (motion, basis) = tiny_motion(&mut rng)?;
    let mut reenact = tiny_reenact(&mut rng)?;
    jitter(&mut reenact, &mut rng, 0.05);
    let generator = Generator { motion, reenact };
    let source = randn(&mut rng, &[1, 3, 8, 8], 1.0).abs();
    let coeff = |rng: &mut ChaCha8Rng, k: usize| randn(rng, &[k], 0.5);
    let mut pose = crate::face::IDENTITY_POSE.to_vec();
    pose.iter_mut()
        .for_each(|p| *p += rng.random_range(-0.1..0.1));
    let spose = Tensor::new(pose.clone(), &[12])?;
    pose.iter_mut()
        .for_each(|p| *p += rng.random_range(-0.1..0.1));
    let dpose = Tensor::new(pose, &[12])?;
    let extra = vec![
        coeff(&mut rng, N_ID),
        coeff(&mut rng, N_EXP),
        spose,
        coeff(&mut rng, N_EXP),
        dpose,
        source,
    ];
    out.push((
        "full generator".into(),
        module_grad_check(generator, extra, 6, 16, |g, e| {
            let (ms, md) =
                crate::face::build_pair_tensors(&basis, &e[0], &e[1], &e[2], &e[3], &e[4])?;
            let stacked = Tensor::concat(&[ms, md], 1)?;
            g.forward(&e[5], &[stacked])
        })?,
    ));
    Ok(out)
}

/// Summary line of [`gradient_checks`]: passes when every function is within
/// 1e-4 under the plain relative error, and names the failures with both the
/// plain and the scale-floored error.
pub fn gradient_result(reports: &[(String, GradCheckReport)], seconds: f64) -> CheckResult {
    let worst = reports
        .iter()
        .map(|(_, r)| r.max_rel_error)
        .fold(0.0f64, f64::max);
    let worst_scaled = reports
        .iter()
        .map(|(_, r)| r.max_scaled_error)
        .fold(0.0f64, f64::max);
    let failing: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !r.passed(1e-4))
        .map(|(n, r)| {
            format!(
                "{n} {:.1e} (scaled {:.1e})",
                r.max_rel_error, r.max_scaled_error
            )
        })
        .collect();
    CheckResult {
        name: format!("gradient checks ({} functions)", reports.len()),
        passed: failing.is_empty(),
        detail: if failing.is_empty() {
            format!("max relative error {worst:.3e}, scaled {worst_scaled:.3e} (tolerance 1e-4)")
        } else {
            format!(
                "failing: {}; max scaled error {worst_scaled:.3e}",
                failing.join(", ")
            )
        },
        seconds,
    }
}

/// The whole suite at desk scale. `mutate` flips the sign of the Chebyshev
/// recurrence so the spectral oracle must catch it.
pub fn run_all(mutate: bool) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let recurrence = if mutate {
        Recurrence::Flipped
    } else {
        Recurrence::Standard
    };
    let (err, secs) = timed(|| spectral_oracle_error(50, 1, recurrence))?;
    results.push(CheckResult {
        name: "spectral oracle (50 graphs, K = 3)".into(),
        passed: err <= 1e-9,
        detail: format!("max relative error {err:.3e} (tolerance 1e-9)"),
        seconds: secs,
    });

    let (reports, secs) = timed(|| gradient_checks(2))?;
    results.push(gradient_result(&reports, secs));

    let (lap, secs) = timed(|| laplacian_suite(20, 3))?;
    results.push(CheckResult {
        name: "Laplacian invariants (20 meshes)".into(),
        passed: lap.max_asymmetry == 0.0
            && lap.max_diagonal_deviation == 0.0
            && lap.max_entry_deviation <= 1e-12
            && lap.min_eigenvalue >= -1e-10
            && lap.max_eigenvalue <= 2.0 + 1e-10
            && lap.max_null_residual <= 1e-10,
        detail: format!(
            "asymmetry {:.1e}, diagonal {:.1e}, spectrum [{:.3e}, {:.6}], null residual {:.1e}",
            lap.max_asymmetry,
            lap.max_diagonal_deviation,
            lap.min_eigenvalue,
            lap.max_eigenvalue,
            lap.max_null_residual
        ),
        seconds: secs,
    });

    let ((alg, basis), secs) = timed(|| {
        let basis = gen_synthetic_basis(11, Arc::new(icosphere(3)))?;
        Ok((face_algebra(&basis, 4)?, basis))
    })?;
    results.push(CheckResult {
        name: "linear face model algebra".into(),
        passed: alg.zero_is_mean && alg.linearity_error <= 1e-12 && alg.driving_identity_invariant,
        detail: format!(
            "zero → mean {}, linearity {:.1e}, driving identity ignored {}",
            alg.zero_is_mean, alg.linearity_error, alg.driving_identity_invariant
        ),
        seconds: secs,
    });

    let (warp, secs) = timed(|| warp_oracles(5))?;
    results.push(CheckResult {
        name: "warp oracles".into(),
        passed: warp.zero_flow_exact && warp.shift_error <= 1e-10 && warp.linearity_error <= 1e-12,
        detail: format!(
            "zero flow exact {}, shift {:.1e}, linearity {:.1e}",
            warp.zero_flow_exact, warp.shift_error, warp.linearity_error
        ),
        seconds: secs,
    });

    let ((lin, cst), secs) = timed(|| gp_analytic(6))?;
    results.push(CheckResult {
        name: "gradient penalty analytic cases".into(),
        passed: lin <= 1e-10 && cst == LAMBDA_GP,
        detail: format!("unit linear critic {lin:.1e}, constant critic {cst}"),
        seconds: secs,
    });

    let ((zero, ident), secs) = timed(|| init_invariant(&basis, &TrainConfig::default(), 7))?;
    results.push(CheckResult {
        name: "untrained flow is zero and warps to identity".into(),
        passed: zero && ident,
        detail: format!("zero flow {zero}, identity warp {ident}"),
        seconds: secs,
    });
    Ok(results)
}
