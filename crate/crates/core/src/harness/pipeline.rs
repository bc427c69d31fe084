//! Dataset preparation, regressor pretraining and training in one call.

use std::path::Path;
use std::sync::Arc;

use super::config::TrainConfig;
use super::model::Model;
use super::train::{train, TrainOutcome};
use crate::error::{Error, Result};
use crate::face::{gen_synthetic_basis, icosphere};
use crate::synth::{make_dataset, pretrain_regressor, Dataset, PretrainConfig, PretrainReport};

/// Renders the dataset described by `config` in memory.
pub fn generate_dataset(config: &TrainConfig) -> Result<Dataset> {
    let topology = Arc::new(icosphere(config.mesh_level));
    let basis = Arc::new(gen_synthetic_basis(config.basis_seed, topology)?);
    make_dataset(
        config.data_seed,
        basis,
        config.identities,
        config.frames_per_identity,
        config.image_size,
        config.mesh_level,
        config.basis_seed,
    )
}

/// Loads `config.dataset` when it names an existing directory, otherwise
/// renders the dataset (and writes it there when a path is given).
pub fn dataset_for(config: &TrainConfig) -> Result<Dataset> {
    match &config.dataset {
        Some(dir) if dir.join("meta").exists() => {
            let d = Dataset::load(dir)?;
            if d.meta.mesh_level != config.mesh_level {
                return Err(Error::Config(format!(
                    "dataset mesh level {} disagrees with config {}",
                    d.meta.mesh_level, config.mesh_level
                )));
            }
            Ok(d)
        }
        Some(dir) => {
            let d = generate_dataset(config)?;
            d.save(dir)?;
            Ok(d)
        }
        None => generate_dataset(config),
    }
}

/// Frame indices of the training identities.
pub fn training_frames(config: &TrainConfig, dataset: &Dataset) -> Vec<usize> {
    config
        .train_identities()
        .flat_map(|id| dataset.frames_of(id))
        .collect()
}

/// Fresh model with a pretrained coefficient regressor, unless the config
/// selects the oracle regressor.
pub fn prepare_model(
    config: &TrainConfig,
    dataset: &Dataset,
) -> Result<(Model, Option<PretrainReport>)> {
    let mut model = Model::for_basis(config.clone(), &dataset.basis)?;
    if config.use_oracle_regressor {
        return Ok((model, None));
    }
    let pretrain = PretrainConfig {
        steps: config.regressor_steps,
        batch_size: config.regressor_batch,
        lr: config.regressor_lr,
        seed: config.seed,
        ..PretrainConfig::default()
    };
    let (regressor, report) =
        pretrain_regressor(dataset, &training_frames(config, dataset), &pretrain)?;
    log::info!(
        "regressor mse: step 0 {:.5}, final {:.5}",
        report.step0_mse,
        report.final_mse
    );
    model.regressor = Some(regressor);
    Ok((model, Some(report)))
}

pub struct TrainRun {
    pub model: Model,
    pub dataset: Dataset,
    pub outcome: TrainOutcome,
    pub pretrain: Option<PretrainReport>,
}

/// Dataset, regressor and adversarial training for `config`.
pub fn run_training(config: &TrainConfig, checkpoint: Option<&Path>) -> Result<TrainRun> {
    config.validate()?;
    let dataset = dataset_for(config)?;
    let (mut model, pretrain) = prepare_model(config, &dataset)?;
    let outcome = train(&mut model, &dataset, checkpoint)?;
    Ok(TrainRun {
        model,
        dataset,
        outcome,
        pretrain,
    })
}
