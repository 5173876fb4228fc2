//! Layer-sequence neural-network engine with exact reverse-mode gradients.

pub mod gradcheck;
pub mod layer;
pub(crate) mod linalg;
pub mod loss;
pub mod optim;
pub mod sequential;

use rand_chacha::ChaCha8Rng;

pub use layer::{softmax_rows, Init, Layer, LayerSpec};
pub use loss::{cross_entropy, CrossEntropy};
pub use optim::{Optimizer, OptimizerConfig};
pub use sequential::Sequential;

use crate::tensor::Tensor;

/// Seeded generator used for init, dropout masks and shuffling.
pub type SeededRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorKind {
    /// Learnable weight with a gradient.
    Param,
    /// Non-learnable state such as batchnorm running statistics.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub tensor: Tensor,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, kind: TensorKind, tensor: Tensor) -> Self {
        Self { name: name.into(), kind, tensor }
    }
}
