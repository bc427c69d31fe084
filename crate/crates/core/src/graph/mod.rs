//! Spectral graph layers on a fixed mesh connectivity.
//!
//! Filters are Chebyshev polynomials of the rescaled normalized Laplacian
//! `L~ = 2L/λ_max − I`, evaluated with the three-term recurrence so no
//! polynomial matrix is ever formed.

pub mod oracle;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{join, ones_param, uniform, zeros_param, Linear, Module};
use crate::tensor::{SparseMatrix, Tensor};

/// `L = I − D^{-1/2} A D^{-1/2}` for a symmetric binary adjacency with zero
/// diagonal and no isolated vertices.
pub fn normalized_laplacian(adjacency: &SparseMatrix) -> Result<SparseMatrix> {
    let n = adjacency.rows();
    if !adjacency.is_symmetric() {
        return Err(Error::invalid(
            "normalized_laplacian",
            "adjacency is not symmetric",
        ));
    }
    let mut degree = vec![0.0f64; n];
    for (r, c, v) in adjacency.entries() {
        if r == c {
            return Err(Error::invalid(
                "normalized_laplacian",
                format!("self loop at vertex {r}"),
            ));
        }
        if v != 1.0 {
            return Err(Error::invalid(
                "normalized_laplacian",
                format!("non-binary weight {v} at ({r}, {c})"),
            ));
        }
        degree[r] += 1.0;
    }
    if let Some(v) = degree.iter().position(|&d| d == 0.0) {
        return Err(Error::IsolatedVertex(v));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut entries: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    entries.extend(
        adjacency
            .entries()
            .map(|(r, c, _)| (r, c, -inv_sqrt[r] * inv_sqrt[c])),
    );
    SparseMatrix::from_triplets(n, n, entries, true)
}

/// `2L/λ_max − I`.
pub fn scale_laplacian(laplacian: &SparseMatrix, lambda_max: f64) -> Result<SparseMatrix> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::invalid(
            "scale_laplacian",
            format!("lambda_max {lambda_max} must be positive"),
        ));
    }
    let eye = SparseMatrix::identity(laplacian.rows());
    laplacian.add_scaled(2.0 / lambda_max, &eye, -1.0)
}

pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITERS: usize = 1000;

/// Power iteration on a symmetric PSD matrix: the Rayleigh quotient once it
/// changes by less than `tol` (relative), or `None` after `max_iters`.
pub fn power_iteration(m: &SparseMatrix, tol: f64, max_iters: usize) -> Option<(f64, usize)> {
    let n = m.rows();
    // Fixed, non-symmetric start vector so no eigenvector is missed.
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0 * if i % 2 == 0 { 1.0 } else { -1.5 })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut prev = f64::NAN;
    for it in 1..=max_iters {
        let w = m.matvec(&v);
        let rq: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nw = norm(&w);
        if nw == 0.0 {
            return Some((0.0, it));
        }
        v = w.into_iter().map(|x| x / nw).collect();
        if (rq - prev).abs() <= tol * rq.abs().max(1.0) {
            return Some((rq, it));
        }
        prev = rq;
    }
    None
}

/// Largest eigenvalue of a normalized Laplacian. Falls back to the spectral
/// bound 2 when power iteration does not converge.
pub fn estimate_lambda_max(laplacian: &SparseMatrix) -> f64 {
    match power_iteration(laplacian, POWER_TOL, POWER_MAX_ITERS) {
        Some((lambda, _)) => lambda.min(2.0),
        None => {
            log::warn!(
                "power iteration did not converge in {POWER_MAX_ITERS} steps; using lambda_max = 2"
            );
            2.0
        }
    }
}

/// Rescaled Laplacian of an adjacency, ready for [`ChebConv`].
pub fn chebyshev_operator(adjacency: &SparseMatrix) -> Result<Arc<SparseMatrix>> {
    let l = normalized_laplacian(adjacency)?;
    let lambda = estimate_lambda_max(&l);
    Ok(Arc::new(scale_laplacian(&l, lambda)?))
}

/// Sign convention for the `T_k` recurrence. `Flipped` computes
/// `T_k = −2 L~ T_{k−1} − T_{k−2}` and exists only for mutation testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Recurrence {
    #[default]
    Standard,
    Flipped,
}

/// `[T_0 x | T_1 x | … | T_{K−1} x]` as an `[n, K·C]` tensor.
pub fn chebyshev_basis(
    l_scaled: &Arc<SparseMatrix>,
    x: &Tensor,
    k: usize,
    recurrence: Recurrence,
) -> Result<Tensor> {
    if x.ndim() != 2 || x.shape()[0] != l_scaled.rows() {
        return Err(Error::shape(
            "cheb_conv",
            format!("[{}, C]", l_scaled.rows()),
            format!("{:?}", x.shape()),
        ));
    }
    let sign = match recurrence {
        Recurrence::Standard => 2.0,
        Recurrence::Flipped => -2.0,
    };
    let mut terms = vec![x.clone()];
    if k > 1 {
        terms.push(x.spmm(l_scaled)?);
    }
    for i in 2..k {
        let next = terms[i - 1]
            .spmm(l_scaled)?
            .scale(sign)
            .sub(&terms[i - 2])?;
        terms.push(next);
    }
    if terms.len() == 1 {
        return Ok(terms.pop().expect("one term"));
    }
    Tensor::concat(&terms, 1)
}

/// Chebyshev spectral convolution with `K` taps; `theta` is `[K, C_in, C_out]`.
pub struct ChebConv {
    pub theta: Tensor,
    pub bias: Tensor,
    pub recurrence: Recurrence,
}

impl ChebConv {
    pub fn new(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize) -> Self {
        assert!(k >= 1, "Chebyshev order must be at least 1");
        let bound = (6.0 / (k * c_in + c_out) as f64).sqrt();
        ChebConv {
            theta: uniform(rng, &[k, c_in, c_out], bound),
            bias: zeros_param(&[c_out]),
            recurrence: Recurrence::Standard,
        }
    }

    pub fn order(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.theta.shape()[2]
    }

    pub fn forward(&self, l_scaled: &Arc<SparseMatrix>, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 2 || x.shape()[1] != self.c_in() {
            return Err(Error::shape(
                "cheb_conv",
                format!("[n, {}]", self.c_in()),
                format!("{:?}", x.shape()),
            ));
        }
        let k = self.order();
        let basis = chebyshev_basis(l_scaled, x, k, self.recurrence)?;
        let w = self.theta.reshape(&[k * self.c_in(), self.c_out()])?;
        basis.matmul(&w)?.add(&self.bias)
    }
}

impl Module for ChebConv {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "theta"), &mut self.theta);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-vertex dense layer.
pub type GraphLinear = Linear;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Normalizes each channel over the rows of an `[n, C]` tensor, then applies
/// a per-channel affine map.
pub fn instance_norm_graph(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 || x.shape()[0] < 2 {
        return Err(Error::invalid(
            "instance_norm",
            format!("need [n >= 2, C], got {:?}", x.shape()),
        ));
    }
    let c = x.shape()[1];
    if scale.numel() != c || shift.numel() != c {
        return Err(Error::shape(
            "instance_norm",
            format!("{c} scale/shift values"),
            format!("{}/{}", scale.numel(), shift.numel()),
        ));
    }
    let centered = x.sub(&x.mean_to(&[1, c])?)?;
    let var = centered.square().mean_to(&[1, c])?;
    let normed = centered.div(&var.add_scalar(INSTANCE_NORM_EPS).sqrt()?)?;
    normed
        .mul(&scale.reshape(&[1, c])?)?
        .add(&shift.reshape(&[1, c])?)
}

pub struct InstanceNorm {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        InstanceNorm {
            scale: ones_param(&[channels]),
            shift: zeros_param(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        instance_norm_graph(x, &self.scale, &self.shift)
    }
}

impl Module for InstanceNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "shift"), &mut self.shift);
    }
}

/// `skip(x) + linear(relu(norm(cheb(x))))`, with a projection skip only when
/// the channel count changes.
pub struct SpectralResidualBlock {
    pub cheb: ChebConv,
    pub norm: InstanceNorm,
    pub linear: GraphLinear,
    pub skip: Option<GraphLinear>,
}

impl SpectralResidualBlock {
    pub fn new(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize) -> Self {
        SpectralResidualBlock {
            cheb: ChebConv::new(rng, k, c_in, c_out),
            norm: InstanceNorm::new(c_out),
            linear: Linear::new(rng, c_out, c_out),
            skip: (c_in != c_out).then(|| {
                Linear::with_bound(rng, c_in, c_out, (6.0 / (c_in + c_out) as f64).sqrt())
            }),
        }
    }

    pub fn forward(&self, l_scaled: &Arc<SparseMatrix>, x: &Tensor) -> Result<Tensor> {
        let h = self.cheb.forward(l_scaled, x)?;
        let h = self.norm.forward(&h)?.relu();
        let h = self.linear.forward(&h)?;
        let skip = match &self.skip {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        skip.add(&h)
    }
}

impl Module for SpectralResidualBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.cheb.visit(&join(prefix, "cheb"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.linear.visit(&join(prefix, "linear"), f);
        if let Some(s) = &mut self.skip {
            s.visit(&join(prefix, "skip"), f);
        }
    }
}
