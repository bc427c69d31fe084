//! Occlusion-aware feature warping: the source image is encoded, its
//! features are resampled along the (masked) flow, gated by an occlusion
//! map and decoded into the reenacted frame.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, Module};
use crate::tensor::Tensor;
use crate::vision::{doublings, DownBlock, ResBlock, UpBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReenactConfig {
    pub image_size: usize,
    /// Widths of the three stride-2 appearance blocks.
    pub encoder_channels: Vec<usize>,
    /// Widths of the four hourglass down blocks.
    pub hourglass_channels: Vec<usize>,
    pub decoder_res_blocks: usize,
}

impl Default for ReenactConfig {
    fn default() -> Self {
        ReenactConfig {
            image_size: 64,
            encoder_channels: vec![32, 64, 128],
            hourglass_channels: vec![32, 64, 128, 256],
            decoder_res_blocks: 2,
        }
    }
}

/// `O` and `M`, each `[B, 1, H, W]` in `(0, 1)`.
#[derive(Debug, Clone)]
pub struct OcclusionOutputs {
    pub occlusion: Tensor,
    pub mask: Tensor,
}

/// Hourglass with additive-by-concatenation skips and two sigmoid heads.
pub struct OcclusionNet {
    pub down: Vec<DownBlock>,
    pub up: Vec<Conv2d>,
    pub occlusion_head: Conv2d,
    pub mask_head: Conv2d,
}

impl OcclusionNet {
    pub fn new(rng: &mut ChaCha8Rng, channels: &[usize]) -> Self {
        let mut down = Vec::new();
        let mut c = 3;
        for &w in channels {
            down.push(DownBlock::relu(rng, c, w));
            c = w;
        }
        // Decoder level i upsamples to the resolution of down[depth-2-i] and
        // concatenates its features; the last level returns to full size.
        let depth = channels.len();
        let mut up = Vec::new();
        let mut c_in = channels[depth - 1];
        for i in 0..depth {
            let skip = if i + 1 < depth {
                channels[depth - 2 - i]
            } else {
                3
            };
            let c_out = if i + 1 < depth {
                channels[depth - 2 - i]
            } else {
                (channels[0] / 2).max(8)
            };
            up.push(Conv2d::new(rng, c_in, c_out, 3, 1));
            c_in = c_out + skip;
        }
        let mut occlusion_head = Conv2d::new(rng, c_in, 1, 3, 1);
        let mut mask_head = Conv2d::new(rng, c_in, 1, 3, 1);
        // Open gates at start: sigmoid(3) ≈ 0.95.
        for head in [&mut occlusion_head, &mut mask_head] {
            head.weight = head.weight.scale(0.1).detach().requires_grad();
            head.bias = Tensor::full(&[1, 1, 1, 1], 3.0).requires_grad();
        }
        OcclusionNet {
            down,
            up,
            occlusion_head,
            mask_head,
        }
    }

    pub fn forward(&self, warped: &Tensor) -> Result<OcclusionOutputs> {
        if warped.ndim() != 4 || warped.shape()[1] != 3 {
            return Err(Error::shape(
                "occlusion",
                "[B, 3, H, W]",
                format!("{:?}", warped.shape()),
            ));
        }
        let mut skips = vec![warped.clone()];
        let mut x = warped.clone();
        for d in &self.down {
            x = d.forward(&x)?;
            skips.push(x.clone());
        }
        skips.pop();
        for conv in &self.up {
            let y = conv.forward(&x.upsample2x()?)?.relu();
            let skip = skips.pop().expect("one skip per level");
            x = Tensor::concat(&[y, skip], 1)?;
        }
        Ok(OcclusionOutputs {
            occlusion: self.occlusion_head.forward(&x)?.sigmoid(),
            mask: self.mask_head.forward(&x)?.sigmoid(),
        })
    }
}

impl Module for OcclusionNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, d) in self.down.iter_mut().enumerate() {
            d.visit(&join(prefix, &format!("down{i}")), f);
        }
        for (i, u) in self.up.iter_mut().enumerate() {
            u.visit(&join(prefix, &format!("up{i}")), f);
        }
        self.occlusion_head
            .visit(&join(prefix, "occlusion_head"), f);
        self.mask_head.visit(&join(prefix, "mask_head"), f);
    }
}

pub struct AppearanceEncoder {
    pub blocks: Vec<DownBlock>,
}

impl AppearanceEncoder {
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut x = image.clone();
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        Ok(x)
    }
}

impl Module for AppearanceEncoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }
}

pub struct ImageDecoder {
    pub res: Vec<ResBlock>,
    pub ups: Vec<UpBlock>,
    pub out: Conv2d,
}

impl ImageDecoder {
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let mut x = features.clone();
        for r in &self.res {
            x = r.forward(&x)?;
        }
        for u in &self.ups {
            x = u.forward(&x)?;
        }
        Ok(self.out.forward(&x.relu())?.sigmoid())
    }
}

impl Module for ImageDecoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, r) in self.res.iter_mut().enumerate() {
            r.visit(&join(prefix, &format!("res{i}")), f);
        }
        for (i, u) in self.ups.iter_mut().enumerate() {
            u.visit(&join(prefix, &format!("up{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }
}

/// Intermediate tensors of one reenactment, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct ReenactTrace {
    pub warped_image: Tensor,
    pub occlusion: OcclusionOutputs,
    pub masked_flow: Tensor,
    pub features: Tensor,
    pub warped_features: Tensor,
    pub fused: Tensor,
    pub output: Tensor,
}

/// Overrides for the occlusion heads, used to isolate pipeline stages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadOverride {
    pub occlusion: Option<f64>,
    pub mask: Option<f64>,
}

pub struct ReenactNet {
    pub encoder: AppearanceEncoder,
    pub occlusion: OcclusionNet,
    pub decoder: ImageDecoder,
    pub image_size: usize,
}

impl ReenactNet {
    pub fn new(rng: &mut ChaCha8Rng, config: &ReenactConfig) -> Result<Self> {
        let depth = config.encoder_channels.len();
        let feat = config.image_size >> depth;
        if doublings(feat.max(1), config.image_size) != Some(depth) {
            return Err(Error::Config(format!(
                "image size {} not divisible by 2^{depth}",
                config.image_size
            )));
        }
        if doublings(1, config.image_size).map_or(true, |d| d < config.hourglass_channels.len()) {
            return Err(Error::Config(
                "hourglass deeper than the image allows".into(),
            ));
        }
        if config.encoder_channels.last().is_none_or(|&c| c < 8) {
            return Err(Error::Config(
                "the last encoder width must be at least 8".into(),
            ));
        }
        let mut blocks = Vec::new();
        let mut c = 3;
        for &w in &config.encoder_channels {
            blocks.push(DownBlock::relu(rng, c, w));
            c = w;
        }
        let res = (0..config.decoder_res_blocks)
            .map(|_| ResBlock::new(rng, c))
            .collect();
        let mut ups = Vec::new();
        for _ in 0..depth {
            let next = (c / 2).max(8);
            ups.push(UpBlock::new(rng, c, next));
            c = next;
        }
        let out = Conv2d::new(rng, c, 3, 3, 1);
        Ok(ReenactNet {
            encoder: AppearanceEncoder { blocks },
            occlusion: OcclusionNet::new(rng, &config.hourglass_channels),
            decoder: ImageDecoder { res, ups, out },
            image_size: config.image_size,
        })
    }

    pub fn forward(&self, source: &Tensor, flow: &Tensor) -> Result<Tensor> {
        Ok(self
            .forward_traced(source, flow, HeadOverride::default())?
            .output)
    }

    /// Warps the source, estimates occlusion, masks the flow, warps the
    /// encoded features at their own resolution, gates them and decodes.
    pub fn forward_traced(
        &self,
        source: &Tensor,
        flow: &Tensor,
        overrides: HeadOverride,
    ) -> Result<ReenactTrace> {
        let s = source.shape();
        if s.len() != 4 || s[1] != 3 || s[2] != self.image_size || s[3] != self.image_size {
            return Err(Error::shape(
                "reenact",
                format!("[B, 3, {0}, {0}]", self.image_size),
                format!("{s:?}"),
            ));
        }
        let warped_image = source.grid_sample(flow)?;
        let mut occlusion = self.occlusion.forward(&warped_image)?;
        if let Some(v) = overrides.occlusion {
            occlusion.occlusion = Tensor::full(occlusion.occlusion.shape(), v);
        }
        if let Some(v) = overrides.mask {
            occlusion.mask = Tensor::full(occlusion.mask.shape(), v);
        }
        let masked_flow = flow.mul(&occlusion.mask)?;
        let features = self.encoder.forward(source)?;
        let fh = features.shape()[2];
        let mut small_flow = masked_flow.clone();
        let mut small_occ = occlusion.occlusion.clone();
        while small_flow.shape()[2] > fh {
            small_flow = small_flow.avg_pool2x()?;
            small_occ = small_occ.avg_pool2x()?;
        }
        let warped_features = features.grid_sample(&small_flow)?;
        let fused = warped_features.mul(&small_occ)?;
        let output = self.decoder.forward(&fused)?;
        Ok(ReenactTrace {
            warped_image,
            occlusion,
            masked_flow,
            features,
            warped_features,
            fused,
            output,
        })
    }
}

impl Module for ReenactNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.occlusion.visit(&join(prefix, "occlusion"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}
