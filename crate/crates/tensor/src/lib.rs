//! Dense tensors with reverse-mode automatic differentiation, an Adam
//! optimizer and the GFPC checkpoint format.

mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint, CheckpointError};
pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
