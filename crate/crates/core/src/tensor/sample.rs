//! Bilinear sampling with border clamping.
//!
//! Coordinates are normalized so that the image spans `[-1, 1]` on both axes
//! with pixel centers at `-1 + (2j + 1) / W`. A flow value `f` therefore moves
//! the sample position by `f · W / 2` pixels; the output pixel `(i, j)` reads
//! the source at `(j + fx·W/2, i + fy·H/2)` in pixel units.

#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    y0: usize,
    wx: f64,
    wy: f64,
    /// Derivative of the clamped pixel coordinate w.r.t. the flow component.
    dx: f64,
    dy: f64,
}

fn axis(pos: f64, len: usize, scale: f64) -> (usize, f64, f64) {
    if len == 1 {
        return (0, 0.0, 0.0);
    }
    let max = (len - 1) as f64;
    let (clamped, deriv) = if pos < 0.0 {
        (0.0, 0.0)
    } else if pos > max {
        (max, 0.0)
    } else {
        (pos, scale)
    };
    let i0 = (clamped.floor() as usize).min(len - 2);
    (i0, clamped - i0 as f64, deriv)
}

fn taps(flow: &[f64], h: usize, w: usize) -> Vec<Tap> {
    let hw = h * w;
    let (sx, sy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut out = Vec::with_capacity(hw);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            let px = j as f64 + flow[p] * sx;
            let py = i as f64 + flow[hw + p] * sy;
            let (x0, wx, dx) = axis(px, w, sx);
            let (y0, wy, dy) = axis(py, h, sy);
            out.push(Tap {
                x0,
                y0,
                wx,
                wy,
                dx,
                dy,
            });
        }
    }
    out
}

fn neighbours(t: &Tap, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let x1 = if w > 1 { t.x0 + 1 } else { t.x0 };
    let y1 = if h > 1 { t.y0 + 1 } else { t.y0 };
    (t.y0 * w + t.x0, t.y0 * w + x1, y1 * w + t.x0, y1 * w + x1)
}

pub(crate) fn forward(
    src: &[f64],
    flow: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; n * c * hw];
    for b in 0..n {
        let taps = taps(&flow[b * 2 * hw..(b + 1) * 2 * hw], h, w);
        for ch in 0..c {
            let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (p, t) in taps.iter().enumerate() {
                let (i00, i01, i10, i11) = neighbours(t, h, w);
                dst[p] = (1.0 - t.wy) * ((1.0 - t.wx) * plane[i00] + t.wx * plane[i01])
                    + t.wy * ((1.0 - t.wx) * plane[i10] + t.wx * plane[i11]);
            }
        }
    }
    out
}

/// Adjoint of [`forward`] in its (linear) source argument.
pub(crate) fn src_grad(
    g: &[f64],
    flow: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; n * c * hw];
    for b in 0..n {
        let taps = taps(&flow[b * 2 * hw..(b + 1) * 2 * hw], h, w);
        for ch in 0..c {
            let gp = &g[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (p, t) in taps.iter().enumerate() {
                let (i00, i01, i10, i11) = neighbours(t, h, w);
                let v = gp[p];
                dst[i00] += v * (1.0 - t.wy) * (1.0 - t.wx);
                dst[i01] += v * (1.0 - t.wy) * t.wx;
                dst[i10] += v * t.wy * (1.0 - t.wx);
                dst[i11] += v * t.wy * t.wx;
            }
        }
    }
    out
}

/// Gradient w.r.t. the flow, using the derivative of the open bilinear cell.
pub(crate) fn flow_grad(
    src: &[f64],
    flow: &[f64],
    g: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; n * 2 * hw];
    for b in 0..n {
        let taps = taps(&flow[b * 2 * hw..(b + 1) * 2 * hw], h, w);
        let (gx_out, gy_out) = out[b * 2 * hw..(b + 1) * 2 * hw].split_at_mut(hw);
        for ch in 0..c {
            let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let gp = &g[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (p, t) in taps.iter().enumerate() {
                let (i00, i01, i10, i11) = neighbours(t, h, w);
                let (v00, v01, v10, v11) = (plane[i00], plane[i01], plane[i10], plane[i11]);
                let d_dx = (1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10);
                let d_dy = (1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01);
                gx_out[p] += gp[p] * d_dx * t.dx;
                gy_out[p] += gp[p] * d_dy * t.dy;
            }
        }
    }
    out
}
