//! Dense tensors, reverse-mode differentiation, and optimizers.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use optim::{ema_update, sgd_momentum_step, OptimizerState};
pub use tape::{softmax_cross_entropy, softmax_cross_entropy_with_grad, Gradients, Tape, Var};
pub use tensor::{cosine_similarity, dot, l2_norm, Tensor};

pub(crate) use tape::interleave;
pub(crate) use tensor::check_finite;
