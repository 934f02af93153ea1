//! Learned kernel estimator and image restorer, trained by unrolling their
//! alternation with shared weights.
//!
//! Everything runs on a small reverse-mode differentiation tape ([`tape`])
//! over 64-bit [`Tensor4`] values.

pub mod checkpoint;
mod conv;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{DanConfig, DanModel, NeuralSolver};
pub use tensor::Tensor4;
pub use train::{train_toy, TrainConfig, TrainOutcome};
