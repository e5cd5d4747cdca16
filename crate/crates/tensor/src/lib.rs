//! A small `f64` tensor engine: exactly the layer inventory needed by the
//! depth pose networks (convolution, 2x2 max pooling, 2x upsampling, zero
//! padding, dense, tanh, dropout, flatten), reverse-mode differentiation over
//! a recorded tape, SGD and Adadelta, and a binary checkpoint container.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, NamedNetwork};
pub use error::{Result, TensorError};
pub use network::{
    backward, forward, infer, Backward, Gradients, LayerKind, Mode, ModelState, Network, NetworkSpec, ParamKey,
    ParamRole, Tape,
};
pub use optim::{OptimizerConfig, OptimizerKind};
pub use tensor::Tensor;
