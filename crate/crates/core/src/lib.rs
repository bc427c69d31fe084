//! Mesh-guided one-shot face reenactment at desk scale.

pub mod error;
pub mod face;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod motion;
pub mod nn;
pub mod reenact;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
pub use tensor::Tensor;
