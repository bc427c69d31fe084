//! Assembly of every network the harness trains or evaluates.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::face::{build_pair, stack, Coefficients, FaceBasis, MeshTopology};
use crate::losses::{ConvRegressor, Discriminator, FeaturePyramid};
use crate::motion::MotionNet;
use crate::nn::{join, Module};
use crate::reenact::{HeadOverride, ReenactNet, ReenactTrace};
use crate::sampling::MeshHierarchy;
use crate::tensor::Tensor;

/// Motion net followed by the reenacting module.
pub struct Generator {
    pub motion: MotionNet,
    pub reenact: ReenactNet,
}

impl Generator {
    /// `Î_d` for source images `[B, 3, H, W]` and one stacked `[n, 6]`
    /// feature matrix per batch entry.
    pub fn forward(&self, source: &Tensor, stacked: &[Tensor]) -> Result<Tensor> {
        Ok(self.forward_traced(source, stacked)?.output)
    }

    pub fn forward_traced(&self, source: &Tensor, stacked: &[Tensor]) -> Result<ReenactTrace> {
        if source.shape()[0] != stacked.len() {
            return Err(Error::shape(
                "generator",
                format!("{} meshes", source.shape()[0]),
                stacked.len().to_string(),
            ));
        }
        let flow = self.motion.forward_features(stacked)?;
        self.reenact
            .forward_traced(source, &flow, HeadOverride::default())
    }

    /// Builds the mesh pair for `(source, driving)` coefficients and returns
    /// the stacked features.
    pub fn stacked_input(
        basis: &FaceBasis,
        source: &Coefficients,
        driving: &Coefficients,
    ) -> Result<Tensor> {
        let (ms, md) = build_pair(source, driving, basis)?;
        Ok(stack(&ms, &md)?.features)
    }
}

impl Module for Generator {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.motion.visit(&join(prefix, "motion"), f);
        self.reenact.visit(&join(prefix, "reenact"), f);
    }
}

/// Everything a checkpoint holds.
pub struct Model {
    pub config: TrainConfig,
    pub hierarchy: Arc<MeshHierarchy>,
    pub generator: Generator,
    pub disc: Discriminator,
    pub regressor: Option<ConvRegressor>,
    pub pyramid: FeaturePyramid,
}

/// Decimation hierarchy over the mean face, as the motion encoder needs it.
pub fn build_hierarchy(
    config: &TrainConfig,
    topology: Arc<MeshTopology>,
    mean: &Tensor,
) -> Result<MeshHierarchy> {
    let positions: Vec<[f64; 3]> = mean
        .data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    MeshHierarchy::build(
        topology,
        &positions,
        config.motion.keep_ratio,
        config.motion.pool_levels(),
    )
}

impl Model {
    /// Fresh networks; initialization is a pure function of `config.seed`.
    pub fn new(config: TrainConfig, hierarchy: Arc<MeshHierarchy>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let motion = MotionNet::new(&mut rng, &config.motion, hierarchy.clone())?;
        let reenact = ReenactNet::new(&mut rng, &config.reenact)?;
        let disc = Discriminator::new(&mut rng, config.image_size, &config.disc_channels)?;
        let regressor = if config.use_oracle_regressor {
            None
        } else {
            let mut r = ConvRegressor::new(&mut rng, config.image_size)?;
            r.freeze();
            Some(r)
        };
        let pyramid = FeaturePyramid::new(config.pyramid_seed);
        Ok(Model {
            config,
            hierarchy,
            generator: Generator { motion, reenact },
            disc,
            regressor,
            pyramid,
        })
    }

    /// Builds the hierarchy from the basis mean and initializes the networks.
    pub fn for_basis(config: TrainConfig, basis: &FaceBasis) -> Result<Self> {
        let h = build_hierarchy(&config, basis.topology.clone(), basis.mean())?;
        Model::new(config, Arc::new(h))
    }
}

impl Module for Model {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.generator.visit(prefix, f);
        self.disc.visit(&join(prefix, "disc"), f);
        if let Some(r) = self.regressor.as_mut() {
            r.visit(&join(prefix, "regressor"), f);
        }
    }
}
