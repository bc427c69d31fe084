//! Training objectives: multi-scale perceptual reconstruction, coefficient
//! consistency, discriminator feature matching and the Wasserstein critic
//! with gradient penalty.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::face::{Coefficients, N_COEFFS, N_EXP, N_ID};
use crate::nn::{join, Conv2d, Linear, Module};
use crate::tensor::{grad, Tensor};
use crate::vision::DownBlock;

pub const LAMBDA_GP: f64 = 10.0;
const GP_NORM_EPS: f64 = 1e-12;

/// Loss weights, stored by name.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub rec: f64,
    pub fm: f64,
    pub coeff: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rec: 10.0,
            fm: 10.0,
            coeff: 1.0,
            adv: 1.0,
        }
    }
}

/// Per-term generator losses of one batch.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub rec: Tensor,
    pub coeff: Tensor,
    pub fm: Tensor,
    pub adv: Tensor,
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<Tensor> {
    parts
        .rec
        .scale(w.rec)
        .add(&parts.coeff.scale(w.coeff))?
        .add(&parts.fm.scale(w.fm))?
        .add(&parts.adv.scale(w.adv))
}

/// Image features at several depths, from a frozen network.
pub trait FeatureExtractor {
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>>;
}

/// Frozen random conv stack tapped after each of its five layers.
pub struct FeaturePyramid {
    seed: u64,
    layers: Vec<Conv2d>,
}

impl FeaturePyramid {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [
            (3, 16, 1),
            (16, 16, 1),
            (16, 32, 2),
            (32, 32, 2),
            (32, 64, 2),
        ];
        let mut layers: Vec<Conv2d> = plan
            .iter()
            .map(|&(i, o, s)| Conv2d::new(&mut rng, i, o, 3, s))
            .collect();
        for l in &mut layers {
            l.freeze();
        }
        FeaturePyramid { seed, layers }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl FeatureExtractor for FeaturePyramid {
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        let mut taps = Vec::with_capacity(self.layers.len());
        let mut x = image.clone();
        for l in &self.layers {
            x = l.forward(&x)?.relu();
            taps.push(x.clone());
        }
        Ok(taps)
    }
}

/// Passes the image through unchanged as its only feature.
pub struct IdentityFeatures;

impl FeatureExtractor for IdentityFeatures {
    fn features(&self, image: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![image.clone()])
    }
}

/// Full, 1/2, 1/4 and 1/8 resolution copies by repeated 2× averaging.
pub fn image_pyramid(image: &Tensor, levels: usize) -> Result<Vec<Tensor>> {
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let next = out.last().expect("nonempty").avg_pool2x()?;
        out.push(next);
    }
    Ok(out)
}

pub const PYRAMID_LEVELS: usize = 4;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// `Σ_levels Σ_taps mean |F(Î) − F(I)|`.
pub fn reconstruction_loss(
    extractor: &dyn FeatureExtractor,
    target: &Tensor,
    output: &Tensor,
    levels: usize,
) -> Result<Tensor> {
    same_shape("reconstruction_loss", target, output)?;
    let mut total = Tensor::scalar(0.0);
    for (t, o) in image_pyramid(target, levels)?
        .iter()
        .zip(image_pyramid(output, levels)?.iter())
    {
        for (ft, fo) in extractor
            .features(t)?
            .iter()
            .zip(extractor.features(o)?.iter())
        {
            total = total.add(&fo.sub(ft)?.abs().mean())?;
        }
    }
    Ok(total)
}

/// Critic: stride-2 leaky-relu conv blocks and a linear head; no normalization.
pub struct Discriminator {
    pub blocks: Vec<DownBlock>,
    pub head: Linear,
}

/// Critic scores `[B, 1]` plus the activations of every block.
pub struct CriticOutput {
    pub score: Tensor,
    pub features: Vec<Tensor>,
}

impl Discriminator {
    pub fn new(rng: &mut ChaCha8Rng, image_size: usize, channels: &[usize]) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut c = 3;
        for &w in channels {
            blocks.push(DownBlock::leaky(rng, c, w, 0.2));
            c = w;
        }
        let side = image_size >> channels.len();
        if side == 0 || side << channels.len() != image_size {
            return Err(Error::Config(format!(
                "image size {image_size} too small for {} critic blocks",
                channels.len()
            )));
        }
        let head = Linear::with_bound(
            rng,
            c * side * side,
            1,
            (1.0 / (c * side * side) as f64).sqrt(),
        );
        Ok(Discriminator { blocks, head })
    }

    pub fn forward(&self, image: &Tensor) -> Result<CriticOutput> {
        let b = image.shape()[0];
        let mut x = image.clone();
        let mut features = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            x = blk.forward(&x)?;
            features.push(x.clone());
        }
        let score = self.head.forward(&x.reshape(&[b, x.numel() / b])?)?;
        Ok(CriticOutput { score, features })
    }
}

impl Module for Discriminator {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Anything usable as a critic in the WGAN terms.
pub trait Critic {
    /// Scores `[B, 1]`.
    fn score(&self, image: &Tensor) -> Result<Tensor>;
}

impl Critic for Discriminator {
    fn score(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(image)?.score)
    }
}

/// `Σ_i (1/N_i) · Σ |D^i(I) − D^i(Î)|` with `N_i` the element count of layer i.
pub fn feature_matching_loss(
    d: &Discriminator,
    target: &Tensor,
    output: &Tensor,
) -> Result<Tensor> {
    same_shape("feature_matching_loss", target, output)?;
    let ft = d.forward(target)?.features;
    let fo = d.forward(output)?.features;
    let mut total = Tensor::scalar(0.0);
    for (a, b) in ft.iter().zip(&fo) {
        total = total.add(&b.sub(&a.detach())?.abs().mean())?;
    }
    Ok(total)
}

/// `−E[D(Î)]`.
pub fn generator_adv_loss(d: &dyn Critic, output: &Tensor) -> Result<Tensor> {
    Ok(d.score(output)?.mean().neg())
}

/// The three critic terms, kept separate for logging.
pub struct CriticLoss {
    pub total: Tensor,
    pub wasserstein: f64,
    pub penalty: Tensor,
}

/// `E[D(Î)] − E[D(I)] + λ·E[(‖∇D(x̂)‖ − 1)²]` with `x̂` on per-sample random
/// straight lines between real and generated images.
pub fn wgan_gp_d_loss(
    d: &dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<CriticLoss> {
    same_shape("wgan_gp_d_loss", real, fake)?;
    let b = real.shape()[0];
    let u: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let mut ushape = vec![1; real.ndim()];
    ushape[0] = b;
    let u = Tensor::new(u, &ushape)?;
    let (real, fake) = (real.detach(), fake.detach());
    let interp = real
        .mul(&u)?
        .add(&fake.mul(&u.neg().add_scalar(1.0))?)?
        .detach()
        .requires_grad();
    let penalty = gradient_penalty(d, &interp)?;
    let w = d.score(&fake)?.mean().sub(&d.score(&real)?.mean())?;
    let wasserstein = w.item()?;
    let total = w.add(&penalty.scale(LAMBDA_GP))?;
    Ok(CriticLoss {
        total,
        wasserstein,
        penalty,
    })
}

/// `E[(‖∇_x D(x)‖₂ − 1)²]` per sample, differentiable in the critic weights.
pub fn gradient_penalty(d: &dyn Critic, points: &Tensor) -> Result<Tensor> {
    let points = if points.grad_enabled() {
        points.clone()
    } else {
        points.detach().requires_grad()
    };
    let b = points.shape()[0];
    let score = d.score(&points)?;
    let g = grad(&score.sum(), &[points.clone()], true)?.remove(0);
    let per_sample = g.square().reshape(&[b, g.numel() / b])?.sum_to(&[b, 1])?;
    // Shifted so a zero gradient has norm exactly 0 while sqrt stays smooth.
    let norm = per_sample
        .add_scalar(GP_NORM_EPS)
        .sqrt()?
        .add_scalar(-GP_NORM_EPS.sqrt());
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// Image to `(c_i, c_e, p)`.
pub trait CoefficientRegressor {
    /// `[B, 113]` in `[c_i | c_e | p]` layout.
    fn regress(&self, images: &Tensor) -> Result<Tensor>;
}

/// `Σ|c_i(I_s) − c_i(Î)| + Σ|c_e(I_d) − c_e(Î)| + Σ|p(I_d) − p(Î)|`,
/// averaged over the batch. Targets are constants; gradients reach `Î` only.
pub fn coefficient_loss(
    regressor: &dyn CoefficientRegressor,
    source: &Tensor,
    driving: &Tensor,
    output: &Tensor,
) -> Result<Tensor> {
    let b = output.shape()[0];
    let cs = regressor.regress(source)?.detach();
    let cd = regressor.regress(driving)?.detach();
    let co = regressor.regress(output)?;
    let target = Tensor::concat(
        &[cs.narrow(1, 0, N_ID)?, cd.narrow(1, N_ID, N_COEFFS - N_ID)?],
        1,
    )?;
    Ok(co.sub(&target)?.abs().sum().scale(1.0 / b as f64))
}

/// Small conv regressor: four stride-2 blocks and a linear head to 113.
pub struct ConvRegressor {
    pub blocks: Vec<DownBlock>,
    pub head: Linear,
}

impl ConvRegressor {
    pub fn new(rng: &mut ChaCha8Rng, image_size: usize) -> Result<Self> {
        let plan = [16, 32, 64, 64];
        let side = image_size >> plan.len();
        if side == 0 || side << plan.len() != image_size {
            return Err(Error::Config(format!(
                "image size {image_size} too small for the regressor"
            )));
        }
        let mut blocks = Vec::new();
        let mut c = 3;
        for &w in &plan {
            blocks.push(DownBlock::relu(rng, c, w));
            c = w;
        }
        let fan = c * side * side;
        let mut head = Linear::with_bound(rng, fan, N_COEFFS, (1.0 / fan as f64).sqrt());
        // Start at the neutral pose so early outputs are meaningful.
        let mut bias = vec![0.0; N_COEFFS];
        bias[N_ID + N_EXP..].copy_from_slice(&crate::face::IDENTITY_POSE);
        head.bias = Tensor::new(bias, &[N_COEFFS])?.requires_grad();
        Ok(ConvRegressor { blocks, head })
    }
}

impl CoefficientRegressor for ConvRegressor {
    fn regress(&self, images: &Tensor) -> Result<Tensor> {
        let b = images.shape()[0];
        let mut x = images.clone();
        for blk in &self.blocks {
            x = blk.forward(&x)?;
        }
        self.head.forward(&x.reshape(&[b, x.numel() / b])?)
    }
}

impl Module for ConvRegressor {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Exact lookup of stored ground truth by image content. Unknown images are
/// an error, and the output carries no gradient.
#[derive(Default)]
pub struct OracleRegressor {
    table: HashMap<u64, Vec<f64>>,
}

impl OracleRegressor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &[f64], coeffs: &Coefficients) {
        self.table.insert(image_key(image), coeffs.to_vec());
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// FNV-1a over the bit patterns of one image.
pub fn image_key(image: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in image {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

impl CoefficientRegressor for OracleRegressor {
    fn regress(&self, images: &Tensor) -> Result<Tensor> {
        let b = images.shape()[0];
        let per = images.numel() / b;
        let mut out = Vec::with_capacity(b * N_COEFFS);
        for i in 0..b {
            let key = image_key(&images.data()[i * per..(i + 1) * per]);
            let c = self.table.get(&key).ok_or_else(|| {
                Error::invalid(
                    "oracle_regressor",
                    format!("image {i} of the batch is not a stored frame"),
                )
            })?;
            out.extend_from_slice(c);
        }
        Tensor::new(out, &[b, N_COEFFS])
    }
}
