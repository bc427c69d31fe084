//! Self-reenactment evaluation on held-out identities, with the copy-source
//! and dataset-mean-image baselines.

use serde::Serialize;

use super::metrics::MetricsReport;
use super::model::{Generator, Model};
use crate::error::{Error, Result};
use crate::synth::{Dataset, Image};
use crate::tensor::no_grad;

/// Source frame `0` of each identity drives every other frame of it.
pub fn self_reenactment_pairs(
    dataset: &Dataset,
    identities: std::ops::Range<usize>,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for id in identities {
        let frames = dataset.frames_of(id);
        for d in frames.start + 1..frames.end {
            pairs.push((frames.start, d));
        }
    }
    pairs
}

/// Reenacts `driving` from `source` (frame indices) without recording a tape.
pub fn reenact_frames(
    generator: &Generator,
    dataset: &Dataset,
    source: usize,
    driving: usize,
) -> Result<Image> {
    no_grad(|| {
        let stacked = Generator::stacked_input(
            &dataset.basis,
            &dataset.frames[source].coefficients,
            &dataset.frames[driving].coefficients,
        )?;
        let out = generator.forward(&dataset.frames[source].image.to_tensor(), &[stacked])?;
        Image::from_tensor(&out)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub model: MetricsReport,
    /// `Î_d := I_s`.
    pub copy_source: MetricsReport,
    /// `Î_d :=` pixelwise mean of the training frames.
    pub dataset_mean: MetricsReport,
}

impl EvalReport {
    pub fn psnr_gain_over_copy(&self) -> f64 {
        self.model.psnr_summary.mean - self.copy_source.psnr_summary.mean
    }

    pub fn psnr_gain_over_mean(&self) -> f64 {
        self.model.psnr_summary.mean - self.dataset_mean.psnr_summary.mean
    }
}

/// Scores the model on the held-out identities of the configured split.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<EvalReport> {
    let cfg = &model.config;
    let pairs = self_reenactment_pairs(dataset, cfg.held_out());
    if pairs.is_empty() {
        return Err(Error::invalid("eval", "held-out split is empty"));
    }
    let train_frames: Vec<usize> = cfg
        .train_identities()
        .flat_map(|id| dataset.frames_of(id))
        .collect();
    let mean_image = dataset.mean_image(&train_frames)?;
    let mut ours = Vec::with_capacity(pairs.len());
    let mut copy = Vec::with_capacity(pairs.len());
    let mut mean = Vec::with_capacity(pairs.len());
    for &(s, d) in &pairs {
        let target = dataset.frames[d].image.clone();
        ours.push((
            reenact_frames(&model.generator, dataset, s, d)?,
            target.clone(),
        ));
        copy.push((dataset.frames[s].image.clone(), target.clone()));
        mean.push((mean_image.clone(), target));
    }
    Ok(EvalReport {
        pairs: pairs.len(),
        model: MetricsReport::from_pairs(&ours)?,
        copy_source: MetricsReport::from_pairs(&copy)?,
        dataset_mean: MetricsReport::from_pairs(&mean)?,
    })
}
