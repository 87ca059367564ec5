//! Reverse-mode automatic differentiation over dense `f64` tensors, plus the
//! multilayer perceptron, seven-layer 1-D CNN and three-block 1-D residual
//! network regressors built on top of it.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod network;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{NeuralError, Result};
pub use gradcheck::{grad_check, grad_check_network, GradCheckReport};
pub use network::{
    build_cnn7, build_mlp, build_resnet1d, ActShape, LayerSpec, Mode, Network, NetworkSpec,
    CNN7_DEFAULT_CHANNELS, RESNET1D_DEFAULT_CHANNELS,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use train::{train_network, Normalization, Optimizer, TrainOptions, TrainedNetwork, TrainingOutcome};
