//! Feedforward velocity model with exact input Jacobians, parameter gradients and a trainer.

mod activation;
mod loss;
mod model;
mod train;

pub use activation::{gelu, relu, std_normal_cdf, std_normal_pdf, Activation};
pub use loss::{loss_value_and_grad, LossKind};
pub use model::{Layer, MlpModel, MlpSpec, Normalizer, FORMAT_VERSION, INPUT_DIM, OUTPUT_DIM, SCALE_FLOOR};
pub use train::{
    evaluate_loss, param_gradients, smooth_losses, train, train_with_progress,
    EpochStats, MlpGradients, TrainConfig, TrainHistory, TrainOutcome,
};

#[cfg(test)]
mod tests;
