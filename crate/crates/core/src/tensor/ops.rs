//! Primitive operations, their shape rules and their gradient rules.

use std::sync::Arc;

use super::conv::{self, ConvGeom};
use super::kernels;
use super::sample;
use super::sparse::SparseMatrix;
use super::{numel, Tensor};
use crate::error::{Error, Result};

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Relu(Tensor),
    LeakyRelu(Tensor, f64),
    Sigmoid(Tensor),
    Sqrt(Tensor),
    Abs(Tensor),
    Square(Tensor),
    BroadcastTo(Tensor),
    SumTo(Tensor),
    Reshape(Tensor),
    Transpose(Tensor),
    MatMul(Tensor, Tensor),
    SpMM(Arc<SparseMatrix>, Tensor),
    Concat(Vec<Tensor>, usize),
    Narrow {
        x: Tensor,
        axis: usize,
        start: usize,
    },
    Pad {
        x: Tensor,
        axis: usize,
        start: usize,
    },
    Conv {
        x: Tensor,
        w: Tensor,
        geom: ConvGeom,
    },
    ConvInputGrad {
        dy: Tensor,
        w: Tensor,
        geom: ConvGeom,
    },
    ConvWeightGrad {
        x: Tensor,
        dy: Tensor,
        geom: ConvGeom,
    },
    Upsample2x(Tensor),
    SumPool2x(Tensor),
    SelectRows(Tensor, Arc<Vec<usize>>),
    ScatterRows(Tensor, Arc<Vec<usize>>),
    GridSample(Tensor, Tensor),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sqrt(..) => "sqrt",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::BroadcastTo(..) => "broadcast_to",
            Op::SumTo(..) => "sum_to",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::Concat(..) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Pad { .. } => "pad",
            Op::Conv { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv2d_input_grad",
            Op::ConvWeightGrad { .. } => "conv2d_weight_grad",
            Op::Upsample2x(..) => "upsample2x",
            Op::SumPool2x(..) => "sum_pool2x",
            Op::SelectRows(..) => "select_rows",
            Op::ScatterRows(..) => "scatter_rows",
            Op::GridSample(..) => "grid_sample",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![a, b]
            }
            Op::GridSample(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::BroadcastTo(a)
            | Op::SumTo(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::SpMM(_, a)
            | Op::Upsample2x(a)
            | Op::SumPool2x(a)
            | Op::SelectRows(a, _)
            | Op::ScatterRows(a, _) => vec![a],
            Op::Narrow { x, .. } | Op::Pad { x, .. } => vec![x],
            Op::Concat(xs, _) => xs.iter().collect(),
            Op::Conv { x, w, .. } => vec![x, w],
            Op::ConvInputGrad { dy, w, .. } => vec![dy, w],
            Op::ConvWeightGrad { x, dy, .. } => vec![x, dy],
        }
    }

    /// Vector-Jacobian products, one slot per entry of [`Op::inputs`].
    /// Runs on tensor ops, so the result is itself differentiable whenever
    /// grad recording is on.
    pub(crate) fn vjp(&self, g: &Tensor, create_graph: bool) -> Result<Vec<Option<Tensor>>> {
        let out = match self {
            Op::Add(..) => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub(..) => vec![Some(g.clone()), Some(g.neg())],
            Op::Mul(a, b) => vec![Some(g.mul(b)?), Some(g.mul(a)?)],
            Op::Div(a, b) => {
                let ga = g.div(b)?;
                let gb = ga.mul(a)?.div(b)?.neg();
                vec![Some(ga), Some(gb)]
            }
            Op::Neg(_) => vec![Some(g.neg())],
            Op::Scale(_, c) => vec![Some(g.scale(*c))],
            Op::AddScalar(_) => vec![Some(g.clone())],
            Op::Relu(a) => vec![Some(g.mul(&mask(a, |v| if v > 0.0 { 1.0 } else { 0.0 }))?)],
            Op::LeakyRelu(a, s) => {
                let s = *s;
                vec![Some(g.mul(&mask(a, |v| if v > 0.0 { 1.0 } else { s }))?)]
            }
            Op::Sigmoid(a) => {
                let s = if create_graph {
                    a.sigmoid()
                } else {
                    a.detach().sigmoid()
                };
                let ds = s.mul(&s.neg().add_scalar(1.0))?;
                vec![Some(g.mul(&ds)?)]
            }
            Op::Sqrt(a) => vec![Some(g.div(&a.sqrt()?.scale(2.0))?)],
            Op::Abs(a) => vec![Some(g.mul(&mask(a, |v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }))?)],
            Op::Square(a) => vec![Some(g.mul(&a.scale(2.0))?)],
            Op::BroadcastTo(a) => vec![Some(g.sum_to(a.shape())?)],
            Op::SumTo(a) => vec![Some(g.broadcast_to(a.shape())?)],
            Op::Reshape(a) => vec![Some(g.reshape(a.shape())?)],
            Op::Transpose(_) => vec![Some(g.transpose()?)],
            Op::MatMul(a, b) => vec![
                Some(g.matmul(&b.transpose()?)?),
                Some(a.transpose()?.matmul(g)?),
            ],
            Op::SpMM(m, _) => vec![Some(g.spmm(&Arc::new(m.transpose()))?)],
            Op::Concat(xs, axis) => {
                let mut start = 0;
                let mut v = Vec::with_capacity(xs.len());
                for x in xs {
                    let len = x.shape()[*axis];
                    v.push(Some(g.narrow(*axis, start, len)?));
                    start += len;
                }
                v
            }
            Op::Narrow { x, axis, start } => {
                vec![Some(g.pad_axis(*axis, *start, x.shape()[*axis])?)]
            }
            Op::Pad { x, axis, start } => vec![Some(g.narrow(*axis, *start, x.shape()[*axis])?)],
            Op::Conv { x, w, geom } => vec![
                Some(conv_input_grad(g, w, *geom)),
                Some(conv_weight_grad(x, g, *geom)),
            ],
            Op::ConvInputGrad { dy, w, geom } => vec![
                Some(conv_apply(g, w, *geom)),
                Some(conv_weight_grad(g, dy, *geom)),
            ],
            Op::ConvWeightGrad { x, dy, geom } => vec![
                Some(conv_input_grad(dy, g, *geom)),
                Some(conv_apply(x, g, *geom)),
            ],
            Op::Upsample2x(_) => vec![Some(g.sum_pool2x()?)],
            Op::SumPool2x(_) => vec![Some(g.upsample2x()?)],
            Op::SelectRows(x, idx) => vec![Some(scatter_rows(g, idx, x.shape()[0]))],
            Op::ScatterRows(_, idx) => vec![Some(select_rows(g, idx))],
            Op::GridSample(src, flow) => {
                if create_graph {
                    return Err(Error::SecondOrderUnsupported("grid_sample"));
                }
                let s = src.shape();
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let gs = sample::src_grad(g.data(), flow.data(), n, c, h, w);
                let gf = sample::flow_grad(src.data(), flow.data(), g.data(), n, c, h, w);
                vec![
                    Some(Tensor::raw(gs, s.to_vec())),
                    Some(Tensor::raw(gf, flow.shape().to_vec())),
                ]
            }
        };
        Ok(out)
    }
}

fn mask(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::raw(a.data().iter().map(|&v| f(v)).collect(), a.shape().to_vec())
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
    let data = a.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(data, a.shape().to_vec(), op)
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary(a: &Tensor, b: &Tensor, kind: Bin) -> Result<Tensor> {
    let name = match kind {
        Bin::Add => "add",
        Bin::Sub => "sub",
        Bin::Mul => "mul",
        Bin::Div => "div",
    };
    let out_shape = kernels::broadcast_shape(a.shape(), b.shape())
        .ok_or_else(|| Error::shape(name, shape_str(a.shape()), shape_str(b.shape())))?;
    let a = if a.shape() != out_shape.as_slice() {
        a.broadcast_to(&out_shape)?
    } else {
        a.clone()
    };
    let b = if b.shape() != out_shape.as_slice() {
        b.broadcast_to(&out_shape)?
    } else {
        b.clone()
    };
    let (x, y) = (a.data(), b.data());
    let data: Vec<f64> = match kind {
        Bin::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
        Bin::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
        Bin::Mul => x.iter().zip(y).map(|(p, q)| p * q).collect(),
        Bin::Div => x.iter().zip(y).map(|(p, q)| p / q).collect(),
    };
    let op = match kind {
        Bin::Add => Op::Add(a, b),
        Bin::Sub => Op::Sub(a, b),
        Bin::Mul => Op::Mul(a, b),
        Bin::Div => Op::Div(a, b),
    };
    Ok(Tensor::from_op(data, out_shape, op))
}

fn conv_apply(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let data = conv::forward(&geom, x.data(), w.data());
    Tensor::from_op(
        data,
        geom.output_shape(),
        Op::Conv {
            x: x.clone(),
            w: w.clone(),
            geom,
        },
    )
}

fn conv_input_grad(dy: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let data = conv::input_grad(&geom, dy.data(), w.data());
    Tensor::from_op(
        data,
        geom.input_shape(),
        Op::ConvInputGrad {
            dy: dy.clone(),
            w: w.clone(),
            geom,
        },
    )
}

fn conv_weight_grad(x: &Tensor, dy: &Tensor, geom: ConvGeom) -> Tensor {
    let data = conv::weight_grad(&geom, x.data(), dy.data());
    Tensor::from_op(
        data,
        geom.weight_shape(),
        Op::ConvWeightGrad {
            x: x.clone(),
            dy: dy.clone(),
            geom,
        },
    )
}

fn select_rows(x: &Tensor, idx: &Arc<Vec<usize>>) -> Tensor {
    let c = x.numel() / x.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * c);
    for &r in idx.iter() {
        data.extend_from_slice(&x.data()[r * c..(r + 1) * c]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Tensor::from_op(data, shape, Op::SelectRows(x.clone(), idx.clone()))
}

fn scatter_rows(g: &Tensor, idx: &Arc<Vec<usize>>, rows: usize) -> Tensor {
    let c = g.numel() / g.shape()[0];
    let mut data = vec![0.0; rows * c];
    for (i, &r) in idx.iter().enumerate() {
        let src = &g.data()[i * c..(i + 1) * c];
        data[r * c..(r + 1) * c]
            .iter_mut()
            .zip(src)
            .for_each(|(d, s)| *d += s);
    }
    let mut shape = g.shape().to_vec();
    shape[0] = rows;
    Tensor::from_op(data, shape, Op::ScatterRows(g.clone(), idx.clone()))
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Bin::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Bin::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Bin::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, Bin::Div)
    }

    pub fn neg(&self) -> Tensor {
        unary(self, |v| -v, Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, |v| v * c, Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, |v| v + c, Op::AddScalar(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        unary(
            self,
            |v| if v > 0.0 { v } else { 0.0 },
            Op::Relu(self.clone()),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(
            self,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(self.clone(), slope),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            self,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(self.clone()),
        )
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(i) = self.data().iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(
                "sqrt",
                format!("negative input at index {i}"),
            ));
        }
        Ok(unary(self, f64::sqrt, Op::Sqrt(self.clone())))
    }

    pub fn abs(&self) -> Tensor {
        unary(self, f64::abs, Op::Abs(self.clone()))
    }

    pub fn square(&self) -> Tensor {
        unary(self, |v| v * v, Op::Square(self.clone()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if !kernels::broadcastable(self.shape(), shape) {
            return Err(Error::shape(
                "broadcast_to",
                shape_str(shape),
                shape_str(self.shape()),
            ));
        }
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let data = kernels::broadcast_to(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(
            data,
            shape.to_vec(),
            Op::BroadcastTo(self.clone()),
        ))
    }

    /// Sums over broadcast dimensions so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if !kernels::broadcastable(shape, self.shape()) {
            return Err(Error::shape(
                "sum_to",
                shape_str(shape),
                shape_str(self.shape()),
            ));
        }
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let data = kernels::sum_to(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(
            data,
            shape.to_vec(),
            Op::SumTo(self.clone()),
        ))
    }

    pub fn sum(&self) -> Tensor {
        self.sum_to(&[]).expect("any shape reduces to a scalar")
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Mean over broadcast dimensions, keeping `shape`.
    pub fn mean_to(&self, shape: &[usize]) -> Result<Tensor> {
        let ratio = self.numel() as f64 / numel(shape) as f64;
        Ok(self.sum_to(shape)?.scale(1.0 / ratio))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                shape_str(self.shape()),
                shape_str(shape),
            ));
        }
        if self.shape() == shape {
            return Ok(self.clone());
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape(
                "transpose",
                "2-D tensor",
                shape_str(self.shape()),
            ));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            data,
            vec![c, r],
            Op::Transpose(self.clone()),
        ))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("[m, k] x [k, n] with lhs {:?}", self.shape()),
                shape_str(other.shape()),
            ));
        }
        let (m, k, n) = (self.shape()[0], self.shape()[1], other.shape()[1]);
        let mut data = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.data(),
            false,
            other.data(),
            false,
            0.0,
            &mut data,
        );
        Ok(Tensor::from_op(
            data,
            vec![m, n],
            Op::MatMul(self.clone(), other.clone()),
        ))
    }

    /// Sparse (constant) times dense: `[r, c] x [c, k] -> [r, k]`.
    pub fn spmm(&self, m: &Arc<SparseMatrix>) -> Result<Tensor> {
        if self.ndim() != 2 || self.shape()[0] != m.cols() {
            return Err(Error::shape(
                "spmm",
                format!("[{}, k]", m.cols()),
                shape_str(self.shape()),
            ));
        }
        let k = self.shape()[1];
        let data = m.mul_dense(self.data(), k);
        Ok(Tensor::from_op(
            data,
            vec![m.rows(), k],
            Op::SpMM(m.clone(), self.clone()),
        ))
    }

    pub fn concat(xs: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        if axis >= first.ndim() {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range"),
            ));
        }
        for x in xs {
            let ok = x.ndim() == first.ndim()
                && x.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    shape_str(first.shape()),
                    shape_str(x.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total_axis: usize = xs.iter().map(|x| x.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for x in xs {
                let span = x.shape()[axis] * inner;
                data.extend_from_slice(&x.data()[o * span..(o + 1) * span]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total_axis;
        Ok(Tensor::from_op(data, shape, Op::Concat(xs.to_vec(), axis)))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape()[axis] {
            return Err(Error::invalid(
                "narrow",
                format!(
                    "axis {axis} range {start}..{} of {:?}",
                    start + len,
                    self.shape()
                ),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let full = self.shape()[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            data,
            shape,
            Op::Narrow {
                x: self.clone(),
                axis,
                start,
            },
        ))
    }

    /// Embeds this tensor at `start` along `axis` in a zero tensor of extent `full`.
    pub fn pad_axis(&self, axis: usize, start: usize, full: usize) -> Result<Tensor> {
        if axis >= self.ndim() || start + self.shape()[axis] > full {
            return Err(Error::invalid(
                "pad",
                format!("axis {axis} start {start} full {full}"),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let len = self.shape()[axis];
        let mut data = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data[base..base + len * inner]
                .copy_from_slice(&self.data()[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = full;
        Ok(Tensor::from_op(
            data,
            shape,
            Op::Pad {
                x: self.clone(),
                axis,
                start,
            },
        ))
    }

    /// 2-D convolution of `[N, C, H, W]` by `[O, C, k, k]` (k odd) with zero
    /// padding `k/2`; stride 1 preserves spatial dims, stride 2 halves them.
    pub fn conv2d(&self, weight: &Tensor, stride: usize) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::shape(
                "conv2d",
                format!("input [N, C, H, W] and weight [O, C, k, k], got input {xs:?}"),
                format!("weight {ws:?}"),
            ));
        }
        if ws[2] % 2 == 0 {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel size {} is even", ws[2]),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k: ws[2],
            stride,
        };
        if xs[2] + 2 * geom.pad() < geom.k || xs[3] + 2 * geom.pad() < geom.k {
            return Err(Error::invalid("conv2d", "input smaller than kernel"));
        }
        Ok(conv_apply(self, weight, geom))
    }

    fn planes_hw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        if self.ndim() < 2 {
            return Err(Error::shape(op, "at least 2-D", shape_str(self.shape())));
        }
        let nd = self.ndim();
        let (h, w) = (self.shape()[nd - 2], self.shape()[nd - 1]);
        Ok((self.numel() / (h * w), h, w))
    }

    /// Nearest-neighbour 2× upsampling of the last two dims.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let (p, h, w) = self.planes_hw("upsample2x")?;
        let data = kernels::upsample2x(self.data(), p, h, w);
        let mut shape = self.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] *= 2;
        shape[nd - 1] *= 2;
        Ok(Tensor::from_op(data, shape, Op::Upsample2x(self.clone())))
    }

    /// 2×2 sum pooling of the last two dims (both must be even).
    pub fn sum_pool2x(&self) -> Result<Tensor> {
        let (p, h, w) = self.planes_hw("sum_pool2x")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "sum_pool2x",
                "even spatial dims",
                shape_str(self.shape()),
            ));
        }
        let data = kernels::sum_pool2x(self.data(), p, h, w);
        let mut shape = self.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] /= 2;
        shape[nd - 1] /= 2;
        Ok(Tensor::from_op(data, shape, Op::SumPool2x(self.clone())))
    }

    /// 2×2 average pooling, i.e. bilinear resize by exactly one half.
    pub fn avg_pool2x(&self) -> Result<Tensor> {
        Ok(self.sum_pool2x()?.scale(0.25))
    }

    /// Bilinear sample of `[N, C, H, W]` at identity grid plus `flow`
    /// (`[N, 2, H, W]`, normalized units, channel 0 = x), border clamped.
    pub fn grid_sample(&self, flow: &Tensor) -> Result<Tensor> {
        let (s, f) = (self.shape(), flow.shape());
        if s.len() != 4 || f.len() != 4 || f[0] != s[0] || f[1] != 2 || f[2] != s[2] || f[3] != s[3]
        {
            return Err(Error::shape(
                "grid_sample",
                format!(
                    "flow [{}, 2, {}, {}]",
                    s.first().unwrap_or(&0),
                    s.get(2).unwrap_or(&0),
                    s.get(3).unwrap_or(&0)
                ),
                shape_str(f),
            ));
        }
        let data = sample::forward(self.data(), flow.data(), s[0], s[1], s[2], s[3]);
        Ok(Tensor::from_op(
            data,
            s.to_vec(),
            Op::GridSample(self.clone(), flow.clone()),
        ))
    }

    /// Row gather along dim 0: `out[i] = self[idx[i]]`.
    pub fn select_rows(&self, idx: &Arc<Vec<usize>>) -> Result<Tensor> {
        if self.ndim() == 0 {
            return Err(Error::shape("select_rows", "at least 1-D", "scalar"));
        }
        if let Some(&bad) = idx.iter().find(|&&r| r >= self.shape()[0]) {
            return Err(Error::invalid(
                "select_rows",
                format!("row {bad} out of range {}", self.shape()[0]),
            ));
        }
        if idx.is_empty() {
            return Err(Error::invalid("select_rows", "empty index list"));
        }
        Ok(select_rows(self, idx))
    }

    /// Adjoint of [`Tensor::select_rows`]: adds row `i` into row `idx[i]` of a zero tensor.
    pub fn scatter_rows(&self, idx: &Arc<Vec<usize>>, rows: usize) -> Result<Tensor> {
        if self.ndim() == 0 || idx.len() != self.shape()[0] {
            return Err(Error::shape(
                "scatter_rows",
                format!("{} rows", idx.len()),
                shape_str(self.shape()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&r| r >= rows) {
            return Err(Error::invalid(
                "scatter_rows",
                format!("row {bad} out of range {rows}"),
            ));
        }
        Ok(scatter_rows(self, idx, rows))
    }
}

/// Attributes for dynamically dispatched primitives; unused fields are ignored.
#[derive(Debug, Clone, Default)]
pub struct OpAttrs {
    pub scalar: Option<f64>,
    pub shape: Option<Vec<usize>>,
    pub axis: Option<usize>,
    pub start: Option<usize>,
    pub len: Option<usize>,
    pub stride: Option<usize>,
    pub indices: Option<Vec<usize>>,
    pub sparse: Option<Arc<SparseMatrix>>,
}

fn need<T: Clone>(v: &Option<T>, op: &'static str, what: &str) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::invalid(op, format!("missing attribute `{what}`")))
}

fn arity(inputs: &[Tensor], n: usize, op: &'static str) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::invalid(
            op,
            format!("expected {n} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

/// Runs a primitive by name.
pub fn apply(kind: &str, inputs: &[Tensor], attrs: &OpAttrs) -> Result<Tensor> {
    macro_rules! one {
        ($name:literal) => {{
            arity(inputs, 1, $name)?;
            &inputs[0]
        }};
    }
    macro_rules! two {
        ($name:literal) => {{
            arity(inputs, 2, $name)?;
            (&inputs[0], &inputs[1])
        }};
    }
    match kind {
        "add" => two!("add").0.add(two!("add").1),
        "sub" => two!("sub").0.sub(two!("sub").1),
        "mul" => two!("mul").0.mul(two!("mul").1),
        "div" => two!("div").0.div(two!("div").1),
        "matmul" => two!("matmul").0.matmul(two!("matmul").1),
        "grid_sample" => two!("grid_sample").0.grid_sample(two!("grid_sample").1),
        "conv2d" => {
            let (x, w) = two!("conv2d");
            x.conv2d(w, attrs.stride.unwrap_or(1))
        }
        "neg" => Ok(one!("neg").neg()),
        "scale" => Ok(one!("scale").scale(need(&attrs.scalar, "scale", "scalar")?)),
        "add_scalar" => {
            Ok(one!("add_scalar").add_scalar(need(&attrs.scalar, "add_scalar", "scalar")?))
        }
        "relu" => Ok(one!("relu").relu()),
        "leaky_relu" => Ok(one!("leaky_relu").leaky_relu(attrs.scalar.unwrap_or(0.2))),
        "sigmoid" => Ok(one!("sigmoid").sigmoid()),
        "sqrt" => one!("sqrt").sqrt(),
        "abs" => Ok(one!("abs").abs()),
        "square" => Ok(one!("square").square()),
        "sum" => Ok(one!("sum").sum()),
        "mean" => Ok(one!("mean").mean()),
        "sum_to" => one!("sum_to").sum_to(&need(&attrs.shape, "sum_to", "shape")?),
        "broadcast_to" => {
            one!("broadcast_to").broadcast_to(&need(&attrs.shape, "broadcast_to", "shape")?)
        }
        "reshape" => one!("reshape").reshape(&need(&attrs.shape, "reshape", "shape")?),
        "transpose" => one!("transpose").transpose(),
        "spmm" => one!("spmm").spmm(&need(&attrs.sparse, "spmm", "sparse")?),
        "concat" => Tensor::concat(inputs, attrs.axis.unwrap_or(0)),
        "narrow" => one!("narrow").narrow(
            need(&attrs.axis, "narrow", "axis")?,
            need(&attrs.start, "narrow", "start")?,
            need(&attrs.len, "narrow", "len")?,
        ),
        "upsample2x" => one!("upsample2x").upsample2x(),
        "sum_pool2x" => one!("sum_pool2x").sum_pool2x(),
        "avg_pool2x" => one!("avg_pool2x").avg_pool2x(),
        "select_rows" => one!("select_rows").select_rows(&Arc::new(need(
            &attrs.indices,
            "select_rows",
            "indices",
        )?)),
        other => Err(Error::UnknownOp(other.to_string())),
    }
}
