//! Minimal neural-network engine: layers with reverse-mode rules, the two
//! reference architectures, cross-entropy, Adam, and the training loop.

pub mod adam;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::{adam_step, Adam, AdamState};
pub use layers::{Layer, LayerKind};
pub use loss::{argmax, softmax, softmax_cross_entropy, LossValue};
pub use model::{layer_from_parts, Architecture, Model, IMAGE_SIDE, INPUT_DIM, NUM_CLASSES};
pub use train::{train, EpochStats, Optimizer, TrainConfig, TrainOutcome};
