//! Dense arithmetic, the classifier network, optimizers and gradient checking.

pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod tensor;

pub use network::{EmbeddingSource, FeatureShape, LayerSpec, Network, Outputs};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{softmax, softmax_rows, Tensor};
