//! Trainable-parameter plumbing: dense layers, initializers and Adam.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// Anything that owns named trainable tensors.
///
/// `visit` must report parameters in a fixed order with stable names; the
/// optimizer and the checkpoint format both rely on it.
pub trait Module {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    /// `(name, shape)` of every parameter.
    fn param_shapes(&mut self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| {
            out.push((n.to_string(), t.shape().to_vec()))
        });
        out
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Replaces every parameter by a fresh grad-enabled leaf with the same
    /// values, discarding stale graph references and gradients.
    fn reset_leaves(&mut self) {
        self.visit("", &mut |_, t| *t = t.detach().requires_grad());
    }

    /// Freezes every parameter (gradients no longer flow into them).
    fn freeze(&mut self) {
        self.visit("", &mut |_, t| *t = t.detach());
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform samples in `[-bound, bound]`, as a grad-enabled leaf.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let v: Vec<f64> = (0..numel(shape))
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(v, shape)
        .expect("shape has no zero dims")
        .requires_grad()
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).requires_grad()
}

pub fn ones_param(shape: &[usize]) -> Tensor {
    Tensor::ones(shape).requires_grad()
}

/// Fully connected layer on `[N, in]` rows: `y = x W + b`.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// He-uniform weights, zero bias.
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Self::with_bound(rng, input, output, (6.0 / input as f64).sqrt())
    }

    pub fn with_bound(rng: &mut ChaCha8Rng, input: usize, output: usize, bound: f64) -> Self {
        Linear {
            weight: uniform(rng, &[input, output], bound),
            bias: zeros_param(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// 2-D convolution with bias; weight `[O, C, k, k]`.
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv2d {
    /// He-uniform weights, zero bias.
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize, k: usize, stride: usize) -> Self {
        let fan_in = (input * k * k) as f64;
        Conv2d {
            weight: uniform(rng, &[output, input, k, k], (6.0 / fan_in).sqrt()),
            bias: zeros_param(&[1, output, 1, 1]),
            stride,
        }
    }

    pub fn zeroed(input: usize, output: usize, k: usize, stride: usize) -> Self {
        Conv2d {
            weight: zeros_param(&[output, input, k, k]),
            bias: zeros_param(&[1, output, 1, 1]),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, self.stride)?.add(&self.bias)
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are keyed by parameter name.
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter holding a gradient. Parameters are
    /// replaced by fresh leaves, so their gradients are cleared afterwards.
    pub fn step(&mut self, module: &mut dyn Module, prefix: &str) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut err = None;
        let moments = &mut self.moments;
        module.visit(prefix, &mut |name, t| {
            let Some(g) = t.grad() else {
                *t = t.detach().requires_grad();
                return;
            };
            if let Some(i) = g.first_non_finite() {
                err.get_or_insert(Error::NonFinite {
                    what: format!("gradient of {name}"),
                    index: i,
                });
                return;
            }
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; t.numel()], vec![0.0; t.numel()]));
            let mut new = t.to_vec();
            for (i, gi) in g.data().iter().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                new[i] -= lr * mh / (vh.sqrt() + eps);
            }
            *t = Tensor::new(new, t.shape())
                .expect("same shape")
                .requires_grad();
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use rand::SeedableRng;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(&mut rng, 3, 1);
        let x = Tensor::new(vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0], &[2, 3]).unwrap();
        let y = Tensor::new(vec![1.0, -2.0], &[2, 1]).unwrap();
        let mut opt = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        let loss_of = |l: &Linear| l.forward(&x).unwrap().sub(&y).unwrap().square().mean();
        let first = loss_of(&lin).item().unwrap();
        for _ in 0..300 {
            backward(&loss_of(&lin)).unwrap();
            opt.step(&mut lin, "lin").unwrap();
        }
        let last = loss_of(&lin).item().unwrap();
        assert!(last < 1e-3 * first.max(1.0), "{first} -> {last}");
    }

    #[test]
    fn visit_names_are_prefixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Conv2d::new(&mut rng, 2, 4, 3, 1);
        let names: Vec<_> = c.param_shapes("head").into_iter().map(|p| p.0).collect();
        assert_eq!(names, vec!["head.weight", "head.bias"]);
    }
}
