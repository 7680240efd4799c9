//! Small feedforward networks in double precision: dense, valid-padding
//! convolution, ReLU, max-pooling and a terminal softmax, trained by
//! mini-batch SGD with momentum.

pub mod checkpoint;
mod layer;
mod network;
pub mod profiles;
mod sgd;
mod train;

pub use layer::LayerSpec;
pub use network::{argmax, Network, NetworkSpec, Parameters, Targets};
pub use sgd::Sgd;
pub use train::{train, SampleSource, TrainConfig, TrainSummary};
