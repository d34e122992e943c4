//! Fully connected PReLU network with hand-written backpropagation, Adam,
//! the training losses and the trained-model file format.

mod adam;
mod loss;
mod model;
mod network;
mod normalization;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{combine, loss_residual_add, loss_residual_mul, mse, LossKind, ResidualContext};
pub use model::{zero_network, ModelManifest, Surrogate, MODEL_VERSION};
pub use network::{
    prelu, prelu_derivatives, prelu_vec, ForwardCache, Gradients, Layer, Network, DEFAULT_HIDDEN_LAYERS,
    INITIAL_SLOPE,
};
pub use normalization::NormalizationSpec;
pub use train::{initial_sample_losses, train, EpochRecord, LrSchedule, TrainConfig, TrainOutcome};
