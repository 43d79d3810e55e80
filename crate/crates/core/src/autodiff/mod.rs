//! Reverse-mode automatic differentiation over dense tensors.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use graph::{Graph, Var, LOSS_EPSILON};
pub use params::{glorot_uniform, orthogonal, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
