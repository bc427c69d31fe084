//! Mesh-to-flow autoencoder: a spectral graph encoder over the stacked
//! source/driving mesh and a convolutional decoder that emits a backward
//! warping field in normalized image coordinates.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::StackedMesh;
use crate::graph::{chebyshev_operator, SpectralResidualBlock};
use crate::nn::{join, Conv2d, Linear, Module};
use crate::sampling::{pool, MeshHierarchy};
use crate::tensor::{SparseMatrix, Tensor};
use crate::vision::{doublings, ResBlock, UpBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub image_size: usize,
    pub latent_dim: usize,
    /// Channel widths through the residual blocks, starting with the 6 input features.
    pub encoder_channels: Vec<usize>,
    pub cheb_order: usize,
    pub keep_ratio: f64,
    pub seed_channels: usize,
    /// Slope of the flow head at zero.
    pub flow_scale: f64,
    /// Largest flow component; the head output passes through `limit · tanh(·/limit)`.
    pub flow_limit: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            image_size: 64,
            latent_dim: 64,
            encoder_channels: vec![6, 32, 64, 64, 128],
            cheb_order: 3,
            keep_ratio: 0.5,
            seed_channels: 128,
            flow_scale: 0.1,
            flow_limit: 0.5,
        }
    }
}

impl MotionConfig {
    /// Decimation steps between residual blocks.
    pub fn pool_levels(&self) -> usize {
        self.encoder_channels.len().saturating_sub(2)
    }
}

pub struct MotionEncoder {
    pub blocks: Vec<SpectralResidualBlock>,
    pub head: Linear,
    hierarchy: Arc<MeshHierarchy>,
    operators: Vec<Arc<SparseMatrix>>,
}

impl MotionEncoder {
    pub fn new(
        rng: &mut ChaCha8Rng,
        config: &MotionConfig,
        hierarchy: Arc<MeshHierarchy>,
    ) -> Result<Self> {
        let ch = &config.encoder_channels;
        if ch.len() < 2 || ch[0] != 6 {
            return Err(Error::Config(format!(
                "encoder channels must start at 6 and have a block, got {ch:?}"
            )));
        }
        if hierarchy.levels.len() != config.pool_levels() {
            return Err(Error::Config(format!(
                "{} residual blocks need {} decimation levels, hierarchy has {}",
                ch.len() - 1,
                config.pool_levels(),
                hierarchy.levels.len()
            )));
        }
        let operators = (0..ch.len() - 1)
            .map(|i| chebyshev_operator(&hierarchy.topology(i).adjacency))
            .collect::<Result<Vec<_>>>()?;
        let blocks = ch
            .windows(2)
            .map(|w| SpectralResidualBlock::new(rng, config.cheb_order, w[0], w[1]))
            .collect();
        let last_n = *hierarchy.vertex_counts().last().expect("root level");
        let head = Linear::new(rng, last_n * ch[ch.len() - 1], config.latent_dim);
        Ok(MotionEncoder {
            blocks,
            head,
            hierarchy,
            operators,
        })
    }

    pub fn hierarchy(&self) -> &Arc<MeshHierarchy> {
        &self.hierarchy
    }

    pub fn operators(&self) -> &[Arc<SparseMatrix>] {
        &self.operators
    }

    /// Latent `[1, latent_dim]` for one stacked `[n, 6]` feature matrix.
    pub fn encode_features(&self, features: &Tensor) -> Result<Tensor> {
        let n = self.hierarchy.root.n_vertices;
        if features.shape() != [n, 6] {
            return Err(Error::shape(
                "encode",
                format!("[{n}, 6]"),
                format!("{:?}", features.shape()),
            ));
        }
        let mut x = features.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = pool(&self.hierarchy.levels[i - 1].sampling, &x)?;
            }
            x = block.forward(&self.operators[i], &x)?;
        }
        self.head.forward(&x.reshape(&[1, x.numel()])?)
    }

    pub fn encode(&self, stacked: &StackedMesh) -> Result<Tensor> {
        self.encode_features(&stacked.features)
    }
}

impl Module for MotionEncoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

pub struct FlowDecoder {
    pub seed: Linear,
    pub ups: Vec<UpBlock>,
    pub refine: ResBlock,
    pub out: Conv2d,
    seed_channels: usize,
    flow_scale: f64,
    flow_limit: f64,
}

impl FlowDecoder {
    pub fn new(rng: &mut ChaCha8Rng, config: &MotionConfig) -> Result<Self> {
        let steps = doublings(4, config.image_size)
            .filter(|&s| s >= 1)
            .ok_or_else(|| {
                Error::Config(format!("image size {} is not 4·2^k", config.image_size))
            })?;
        let seed_c = config.seed_channels;
        if seed_c < 8 {
            return Err(Error::Config(format!(
                "seed_channels must be at least 8, got {seed_c}"
            )));
        }
        let seed = Linear::new(rng, config.latent_dim, seed_c * 16);
        let mut ups = Vec::with_capacity(steps);
        let mut c = seed_c;
        for _ in 0..steps {
            let next = (c / 2).max(8);
            ups.push(UpBlock::new(rng, c, next));
            c = next;
        }
        if !(config.flow_scale > 0.0 && config.flow_scale.is_finite()) {
            return Err(Error::Config(format!(
                "flow_scale must be positive, got {}",
                config.flow_scale
            )));
        }
        if !(config.flow_limit > 0.0 && config.flow_limit.is_finite()) {
            return Err(Error::Config(format!(
                "flow_limit must be positive, got {}",
                config.flow_limit
            )));
        }
        Ok(FlowDecoder {
            seed,
            ups,
            refine: ResBlock::new(rng, c),
            out: Conv2d::zeroed(c, 2, 3, 1),
            seed_channels: seed_c,
            flow_scale: config.flow_scale,
            flow_limit: config.flow_limit,
        })
    }

    /// Flow `[B, 2, H, W]` from latents `[B, latent_dim]`.
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let d = self.seed.input_dim();
        if latent.ndim() != 2 || latent.shape()[1] != d {
            return Err(Error::shape(
                "decode",
                format!("[B, {d}]"),
                format!("{:?}", latent.shape()),
            ));
        }
        let b = latent.shape()[0];
        let mut x = self
            .seed
            .forward(latent)?
            .reshape(&[b, self.seed_channels, 4, 4])?;
        for up in &self.ups {
            x = up.forward(&x)?;
        }
        let x = self.refine.forward(&x)?.relu();
        // limit · tanh(z / limit) written as limit · (2σ(2z / limit) − 1); exactly 0 at z = 0.
        let l = self.flow_limit;
        let z = self.out.forward(&x)?.scale(2.0 * self.flow_scale / l);
        Ok(z.sigmoid().scale(2.0 * l).add_scalar(-l))
    }
}

impl Module for FlowDecoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.seed.visit(&join(prefix, "seed"), f);
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit(&join(prefix, &format!("up{i}")), f);
        }
        self.refine.visit(&join(prefix, "refine"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

pub struct MotionNet {
    pub encoder: MotionEncoder,
    pub decoder: FlowDecoder,
}

impl MotionNet {
    pub fn new(
        rng: &mut ChaCha8Rng,
        config: &MotionConfig,
        hierarchy: Arc<MeshHierarchy>,
    ) -> Result<Self> {
        Ok(MotionNet {
            encoder: MotionEncoder::new(rng, config, hierarchy)?,
            decoder: FlowDecoder::new(rng, config)?,
        })
    }

    /// Flow for a batch of stacked `[n, 6]` feature matrices.
    pub fn forward_features(&self, batch: &[Tensor]) -> Result<Tensor> {
        if batch.is_empty() {
            return Err(Error::invalid("motion_net", "empty batch"));
        }
        let latents = batch
            .iter()
            .map(|f| self.encoder.encode_features(f))
            .collect::<Result<Vec<_>>>()?;
        let z = if latents.len() == 1 {
            latents[0].clone()
        } else {
            Tensor::concat(&latents, 0)?
        };
        self.decoder.decode(&z)
    }

    pub fn forward(&self, batch: &[StackedMesh]) -> Result<Tensor> {
        let feats: Vec<Tensor> = batch.iter().map(|s| s.features.clone()).collect();
        self.forward_features(&feats)
    }
}

impl Module for MotionNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}
