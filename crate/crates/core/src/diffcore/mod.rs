//! Dense tensors, a reverse-mode tape, perceptrons, Adam, and a
//! finite-difference gradient oracle.

mod adam;
mod checkpoint;
mod fdiff;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::{atomic_write, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, MAGIC};
pub use fdiff::{finite_diff_gradient, max_relative_error};
pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::{argmax, log_sum_exp};
pub use mlp::{mlp_forward, zero_variance_output, Activation, HeadKind, HeadSpec, MlpSpec, DEFAULT_VARIANCE_FLOOR};
pub use params::{backprop_grads, Bindings, ParamStore};
pub use tensor::Tensor;
