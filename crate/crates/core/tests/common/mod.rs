use mgfr::harness::TrainConfig;
use mgfr::motion::MotionConfig;
use mgfr::reenact::ReenactConfig;

/// A configuration small enough to train in seconds.
pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        image_size: 16,
        mesh_level: 1,
        steps: 4,
        identities: 4,
        frames_per_identity: 3,
        held_out_identities: 1,
        log_every: 1,
        checkpoint_every: 2,
        regressor_steps: 6,
        regressor_batch: 4,
        disc_channels: vec![4, 8],
        motion: MotionConfig {
            image_size: 16,
            latent_dim: 6,
            encoder_channels: vec![6, 4, 4, 5, 5],
            cheb_order: 3,
            keep_ratio: 0.5,
            seed_channels: 8,
            flow_scale: 0.1,
            flow_limit: 0.5,
        },
        reenact: ReenactConfig {
            image_size: 16,
            encoder_channels: vec![4, 8],
            hourglass_channels: vec![3, 4, 4, 5],
            decoder_res_blocks: 1,
        },
        ..TrainConfig::default()
    }
}
