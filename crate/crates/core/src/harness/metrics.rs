//! Image quality metrics for self-reenactment evaluation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::synth::Image;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.height != b.height || a.width != b.width || a.data.len() != b.data.len() {
        return Err(Error::shape(
            "metric",
            format!("{}×{}", a.height, a.width),
            format!("{}×{}", b.height, b.width),
        ));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable Gaussian filter of one `h × w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| taps[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over every valid 11×11 Gaussian window (σ = 1.5) and channel,
/// with `C1 = (0.01)²`, `C2 = (0.03)²` for unit dynamic range.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.data.len() / plane {
        let x = &a.data[ch * plane..(ch + 1) * plane];
        let y = &b.data[ch * plane..(ch + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter(x, h, w, &taps);
        let (my, _, _) = filter(y, h, w, &taps);
        let (sxx, _, _) = filter(&xx, h, w, &taps);
        let (syy, _, _) = filter(&yy, h, w, &taps);
        let (sxy, _, _) = filter(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    /// Population mean and standard deviation.
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Scores for one method over a set of evaluation pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_summary: Summary,
    pub ssim_summary: Summary,
}

impl MetricsReport {
    pub fn from_pairs(pairs: &[(Image, Image)]) -> Result<Self> {
        let mut p = Vec::with_capacity(pairs.len());
        let mut s = Vec::with_capacity(pairs.len());
        for (out, target) in pairs {
            p.push(psnr(out, target)?);
            s.push(ssim(out, target)?);
        }
        Ok(MetricsReport {
            psnr_summary: Summary::of(&p),
            ssim_summary: Summary::of(&s),
            psnr: p,
            ssim: s,
        })
    }
}
