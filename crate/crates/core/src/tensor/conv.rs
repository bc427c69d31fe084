//! 2-D convolution kernels (NCHW, square odd kernels, zero padding `k/2`).
//!
//! The forward pass, the input gradient and the weight gradient are three
//! faces of one trilinear contraction, so each one's gradient is expressed
//! through the other two.

use super::kernels::{col2im, gemm, im2col};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn ho(&self) -> usize {
        (self.h + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn wo(&self) -> usize {
        (self.w + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.h, self.w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.ho(), self.wo()]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.o, self.c, self.k, self.k]
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }
}

/// `y[n] = W · im2col(x[n])`.
pub(crate) fn forward(g: &ConvGeom, x: &[f64], weight: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.ho(), g.wo());
    let hw_in = g.c * g.h * g.w;
    let hw_out = ho * wo;
    let mut col = vec![0.0; g.ckk() * hw_out];
    let mut y = vec![0.0; g.n * g.o * hw_out];
    for n in 0..g.n {
        im2col(
            &x[n * hw_in..(n + 1) * hw_in],
            g.c,
            g.h,
            g.w,
            g.k,
            g.stride,
            g.pad(),
            ho,
            wo,
            &mut col,
        );
        gemm(
            g.o,
            g.ckk(),
            hw_out,
            weight,
            false,
            &col,
            false,
            0.0,
            &mut y[n * g.o * hw_out..(n + 1) * g.o * hw_out],
        );
    }
    y
}

/// Gradient of `<dy, conv(x, W)>` with respect to `x`.
pub(crate) fn input_grad(g: &ConvGeom, dy: &[f64], weight: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.ho(), g.wo());
    let hw_in = g.c * g.h * g.w;
    let hw_out = ho * wo;
    let mut col = vec![0.0; g.ckk() * hw_out];
    let mut dx = vec![0.0; g.n * hw_in];
    for n in 0..g.n {
        gemm(
            g.ckk(),
            g.o,
            hw_out,
            weight,
            true,
            &dy[n * g.o * hw_out..(n + 1) * g.o * hw_out],
            false,
            0.0,
            &mut col,
        );
        col2im(
            &col,
            g.c,
            g.h,
            g.w,
            g.k,
            g.stride,
            g.pad(),
            ho,
            wo,
            &mut dx[n * hw_in..(n + 1) * hw_in],
        );
    }
    dx
}

/// Gradient of `<dy, conv(x, W)>` with respect to `W`.
pub(crate) fn weight_grad(g: &ConvGeom, x: &[f64], dy: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.ho(), g.wo());
    let hw_in = g.c * g.h * g.w;
    let hw_out = ho * wo;
    let mut col = vec![0.0; g.ckk() * hw_out];
    let mut dw = vec![0.0; g.o * g.ckk()];
    for n in 0..g.n {
        im2col(
            &x[n * hw_in..(n + 1) * hw_in],
            g.c,
            g.h,
            g.w,
            g.k,
            g.stride,
            g.pad(),
            ho,
            wo,
            &mut col,
        );
        gemm(
            g.o,
            hw_out,
            g.ckk(),
            &dy[n * g.o * hw_out..(n + 1) * g.o * hw_out],
            false,
            &col,
            true,
            if n == 0 { 0.0 } else { 1.0 },
            &mut dw,
        );
    }
    dw
}
