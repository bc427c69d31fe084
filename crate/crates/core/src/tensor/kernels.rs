//! Slice-level numeric kernels shared by the tensor ops.

/// `c = a · b + beta · c` for row-major matrices, with optional transposes of
/// the stored operands. `a` is `m×k` after transposition, `b` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices are checked above to hold exactly the m×k, k×n and
    // m×n elements addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Numpy-style broadcast of two shapes; `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd {
            a[i + a.len() - nd]
        } else {
            1
        };
        let db = if i + b.len() >= nd {
            b[i + b.len() - nd]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Whether `small` can be broadcast to `big`.
pub(crate) fn broadcastable(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len()
        && small
            .iter()
            .rev()
            .zip(big.iter().rev())
            .all(|(&s, &b)| s == b || s == 1)
}

/// For every flat index of `big`, the flat index of `small` it maps to under
/// broadcasting, visited in order.
fn for_each_broadcast_pair(small: &[usize], big: &[usize], mut f: impl FnMut(usize, usize)) {
    let nd = big.len();
    let pad = nd - small.len();
    let mut small_strides = vec![0usize; nd];
    let mut acc = 1;
    for i in (0..nd).rev() {
        let d = if i >= pad { small[i - pad] } else { 1 };
        small_strides[i] = if d == 1 { 0 } else { acc };
        acc *= d;
    }
    let total: usize = big.iter().product();
    if nd == 0 {
        f(0, 0);
        return;
    }
    // Innermost run is contiguous in `big`; peel it for speed.
    let inner = big[nd - 1];
    let inner_stride = small_strides[nd - 1];
    let mut idx = vec![0usize; nd];
    let mut big_flat = 0;
    while big_flat < total {
        let base: usize = (0..nd - 1).map(|d| idx[d] * small_strides[d]).sum();
        for j in 0..inner {
            f(big_flat + j, base + j * inner_stride);
        }
        big_flat += inner;
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            if idx[d] < big[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_to(src: &[f64], small: &[usize], big: &[usize]) -> Vec<f64> {
    let total: usize = big.iter().product();
    if src.len() == 1 {
        return vec![src[0]; total];
    }
    let mut out = vec![0.0; total];
    for_each_broadcast_pair(small, big, |bi, si| out[bi] = src[si]);
    out
}

pub(crate) fn sum_to(src: &[f64], big: &[usize], small: &[usize]) -> Vec<f64> {
    let n: usize = small.iter().product();
    if n == 1 {
        return vec![src.iter().sum()];
    }
    let mut out = vec![0.0; n];
    for_each_broadcast_pair(small, big, |bi, si| out[si] += src[bi]);
    out
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (Ho·Wo)` patch matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let hw_out = ho * wo;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox + kx) as isize - pad as isize;
                            *v = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *v = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a `C×H×W` image.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    let hw_out = ho * wo;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * wo..(oy + 1) * wo];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Nearest-neighbour 2× upsampling of `planes` stacked `h×w` planes.
pub(crate) fn upsample2x(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx];
                let o = 2 * y * w2 + 2 * xx;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + w2] = v;
                dst[o + w2 + 1] = v;
            }
        }
    }
    out
}

/// 2×2 sum pooling (adjoint of [`upsample2x`]); `h`, `w` are the input dims.
pub(crate) fn sum_pool2x(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for y in 0..h2 {
            for xx in 0..w2 {
                let o = 2 * y * w + 2 * xx;
                dst[y * w2 + xx] = src[o] + src[o + 1] + src[o + w] + src[o + w + 1];
            }
        }
    }
    out
}
