//! Joint adversarial training: one critic step, then one generator step.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::model::{Generator, Model};
use crate::error::{Error, Result};
use crate::losses::{
    coefficient_loss, feature_matching_loss, generator_adv_loss, reconstruction_loss, total_loss,
    wgan_gp_d_loss, LossParts, PYRAMID_LEVELS,
};
use crate::nn::{Adam, AdamConfig, Module};
use crate::synth::Dataset;
use crate::tensor::{backward, Tensor};

/// Losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub rec: f64,
    pub coeff: f64,
    pub fm: f64,
    pub adv: f64,
    pub critic: f64,
    pub wasserstein: f64,
    pub penalty: f64,
}

impl StepRecord {
    pub const HEADER: &'static str = "step,total,rec,coeff,fm,adv,critic,wasserstein,penalty";

    /// Shortest round-trip decimal form of every field.
    pub fn csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.total,
            self.rec,
            self.coeff,
            self.fm,
            self.adv,
            self.critic,
            self.wasserstein,
            self.penalty
        )
    }
}

pub struct TrainOutcome {
    /// Every step, in order.
    pub history: Vec<StepRecord>,
    /// The loss-curve log: header plus one line every `log_every` steps and
    /// at the final step.
    pub log: String,
}

impl TrainOutcome {
    /// Mean generator total over the first and last `fraction` of steps.
    pub fn head_tail_means(&self, fraction: f64) -> (f64, f64) {
        let n = self.history.len();
        let k = ((n as f64 * fraction).round() as usize).clamp(1, n.max(1));
        let mean = |s: &[StepRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64;
        (mean(&self.history[..k]), mean(&self.history[n - k..]))
    }
}

/// Samples `(source, driving)` frame indices of one training identity.
pub fn sample_pair(
    rng: &mut ChaCha8Rng,
    dataset: &Dataset,
    identities: std::ops::Range<usize>,
) -> (usize, usize) {
    let id = rng.random_range(identities);
    let frames = dataset.frames_of(id);
    let k = frames.len();
    let s = rng.random_range(0..k);
    let mut d = rng.random_range(0..k - 1);
    if d >= s {
        d += 1;
    }
    (frames.start + s, frames.start + d)
}

/// Source images, driving images and stacked mesh features for pairs.
pub fn pair_batch(
    dataset: &Dataset,
    pairs: &[(usize, usize)],
) -> Result<(Tensor, Tensor, Vec<Tensor>)> {
    let src: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let drv: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let stacked = pairs
        .iter()
        .map(|&(s, d)| {
            Generator::stacked_input(
                &dataset.basis,
                &dataset.frames[s].coefficients,
                &dataset.frames[d].coefficients,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dataset.batch(&src)?, dataset.batch(&drv)?, stacked))
}

fn ensure_finite(v: f64, step: usize, seed: u64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            seed,
            what: what.to_string(),
        })
    }
}

/// Trains `model` on the training identities of `dataset` for
/// `model.config.steps` generator steps. When `checkpoint` is given it is
/// rewritten every `checkpoint_every` steps and at the end; a diverged run
/// returns an error and leaves the last good checkpoint in place.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = model.config.clone();
    if dataset.meta.height != cfg.image_size || dataset.meta.width != cfg.image_size {
        return Err(Error::Config(format!(
            "dataset images are {}×{}, config expects {}",
            dataset.meta.height, dataset.meta.width, cfg.image_size
        )));
    }
    if dataset.meta.identities < cfg.identities || dataset.meta.frames_per_identity < 2 {
        return Err(Error::Config(
            "dataset is smaller than the configured identity split".into(),
        ));
    }
    if model.regressor.is_none() && !cfg.use_oracle_regressor {
        return Err(Error::Config(
            "no coefficient regressor; pretrain one or select the oracle".into(),
        ));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        ..AdamConfig::default()
    };
    let mut opt_g = Adam::new(adam);
    let mut opt_d = Adam::new(adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_7EA1);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut log = String::from(StepRecord::HEADER);
    log.push('\n');

    for step in 0..cfg.steps {
        let pairs: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| sample_pair(&mut rng, dataset, cfg.train_identities()))
            .collect();
        let (source, driving, stacked) = pair_batch(dataset, &pairs)?;
        let fake = model.generator.forward(&source, &stacked)?;

        // Critic update on the detached output.
        let critic = wgan_gp_d_loss(&model.disc, &driving, &fake.detach(), &mut rng)?;
        let critic_value = critic.total.item()?;
        ensure_finite(critic_value, step, cfg.seed, "critic loss")?;
        backward(&critic.total)?;
        opt_d.step(&mut model.disc, "disc")?;

        // Generator update against the refreshed critic.
        let coeff = match &model.regressor {
            Some(r) => coefficient_loss(r, &source, &driving, &fake)?,
            None => Tensor::scalar(0.0),
        };
        let parts = LossParts {
            rec: reconstruction_loss(&model.pyramid, &driving, &fake, PYRAMID_LEVELS)?,
            coeff,
            fm: feature_matching_loss(&model.disc, &driving, &fake)?,
            adv: generator_adv_loss(&model.disc, &fake)?,
        };
        let total = total_loss(&parts, &cfg.weights)?;
        let record = StepRecord {
            step,
            total: total.item()?,
            rec: parts.rec.item()?,
            coeff: parts.coeff.item()?,
            fm: parts.fm.item()?,
            adv: parts.adv.item()?,
            critic: critic_value,
            wasserstein: critic.wasserstein,
            penalty: critic.penalty.item()?,
        };
        ensure_finite(record.total, step, cfg.seed, "generator loss")?;
        backward(&total)?;
        opt_g.step(&mut model.generator, "")?;
        // The generator loss also reached the critic; drop those gradients.
        model.disc.reset_leaves();

        history.push(record);
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let _ = writeln!(log, "{}", record.csv());
            log::info!(
                "step {step}: total {:.4} rec {:.4} coeff {:.4} fm {:.4} adv {:.4} critic {:.4} gp {:.4}",
                record.total,
                record.rec,
                record.coeff,
                record.fm,
                record.adv,
                record.critic,
                record.penalty
            );
        }
        if let Some(path) = checkpoint {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(model, path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        save_checkpoint(model, path)?;
    }
    Ok(TrainOutcome { history, log })
}
