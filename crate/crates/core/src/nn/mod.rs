//! Dense networks written from scratch: forward pass, cross-entropy,
//! masked SGD and parameter arithmetic on classifier heads.

mod layer;
mod loss;
mod metrics;
mod model;
mod stack;
mod train;

pub use layer::{Activation, DenseLayer};
pub use loss::cross_entropy_grad;
pub use metrics::{
    argmax, evaluate_accuracy, example_losses, logit_margin_delta, logits, margin, max_abs_logit, predictions,
    LabelSource,
};
pub use model::{forward, Model, ModelSpec};
pub use stack::{head_linear_combine, Stack};
pub use train::{sgd_step, SgdConfig, TrainableMask};

pub(crate) use train::step_in_place;
