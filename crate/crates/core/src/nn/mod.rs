//! Dense feed-forward networks: forward passes, backpropagation and training.
//!
//! Everything here is deterministic given its inputs and seeds. All
//! arithmetic is `f64` and sequential, so repeated runs are bit-identical.

mod grad;
mod model;
mod train;

pub(crate) use grad::{check_compatible, cross_entropy_grad, Tape};
pub use grad::{mean_loss, minibatch_gradient, per_example_gradients, Gradients};
pub use model::{argmax, forward, init_model, raw_logits, softmax, Activation, ModelParams, Posterior, Predictor};
pub(crate) use train::Optimizer;
pub use train::{evaluate, evaluate_on, train, train_with_mask, FrozenMask, OptimizerKind, TrainConfig};
