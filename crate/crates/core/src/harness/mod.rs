//! Training loop, evaluation metrics, checkpoints, benchmarks and the oracle
//! check suite behind the command-line tool.

pub mod bench;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use model::{Generator, Model};
