//! Convolutional building blocks shared by the image networks.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{join, Conv2d, Module};
use crate::tensor::Tensor;

/// 2× up-sampling block. The main branch is upsample, conv, relu, conv; the
/// shortcut is the upsampled input truncated to the output channel count.
pub struct UpBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl UpBlock {
    pub fn new(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        assert!(c_out <= c_in, "up-block shortcut needs c_out <= c_in");
        UpBlock {
            conv1: Conv2d::new(rng, c_in, c_out, 3, 1),
            conv2: Conv2d::new(rng, c_out, c_out, 3, 1),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let up = x.upsample2x()?;
        let main = self.conv2.forward(&self.conv1.forward(&up)?.relu())?;
        let c_out = self.conv2.out_channels();
        let shortcut = if up.shape()[1] == c_out {
            up
        } else {
            up.narrow(1, 0, c_out)?
        };
        main.add(&shortcut)
    }
}

impl Module for UpBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

/// `x + conv(relu(conv(x)))` at fixed resolution and width.
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        let mut conv2 = Conv2d::new(rng, channels, channels, 3, 1);
        // Start close to the identity map.
        conv2.weight = conv2.weight.scale(0.1).detach().requires_grad();
        ResBlock {
            conv1: Conv2d::new(rng, channels, channels, 3, 1),
            conv2,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.add(&self.conv2.forward(&self.conv1.forward(x)?.relu())?)
    }
}

impl Module for ResBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
}

/// Stride-2 conv followed by an activation.
pub struct DownBlock {
    pub conv: Conv2d,
    pub leaky: Option<f64>,
}

impl DownBlock {
    pub fn relu(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> Self {
        DownBlock {
            conv: Conv2d::new(rng, c_in, c_out, 3, 2),
            leaky: None,
        }
    }

    pub fn leaky(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, slope: f64) -> Self {
        DownBlock {
            conv: Conv2d::new(rng, c_in, c_out, 3, 2),
            leaky: Some(slope),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(x)?;
        Ok(match self.leaky {
            Some(s) => y.leaky_relu(s),
            None => y.relu(),
        })
    }
}

impl Module for DownBlock {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }
}

/// Number of 2× steps between `from` and `to`, when `to = from · 2^k`.
pub fn doublings(from: usize, to: usize) -> Option<usize> {
    if from == 0 || to % from != 0 || !(to / from).is_power_of_two() {
        return None;
    }
    Some((to / from).trailing_zeros() as usize)
}
