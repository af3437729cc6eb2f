//! Minimal convolutional network: layers, exact backpropagation, loss heads
//! and an SGD training loop.

mod loss;
mod network;
mod tensor;
mod train;

pub use loss::{
    class_balance_weights, loss_multilabel_logistic, loss_regression, loss_softmax_cross_entropy, smooth_l1,
    smooth_l1_derivative, softmax_rows, softplus_neg, ClassStats, LossHead, LossSpec, RegressionKind,
};
pub use network::{Cache, Gradients, LayerParams, LayerSpec, Network, NetworkSpec, Shape3};
pub use tensor::Tensor;
pub use train::{predict_all, train, train_from, Objective, SgdOptions, TrainOutcome};
pub(crate) use network::gemm;
