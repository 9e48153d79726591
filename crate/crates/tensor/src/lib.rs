//! Dense row-major tensors and a define-by-run tape for reverse-mode
//! differentiation.
//!
//! A [`Graph`] borrows a read-only [`ParamStore`] and records every op as a
//! node. Calling [`Graph::backward`] on a scalar node walks the tape in
//! reverse and returns a [`Gradients`] registry with one slot per parameter.
//! Graphs are cheap and single-threaded; build one per example and run many
//! of them on different threads against the same store.

mod checkpoint;
mod element;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC};
pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_in, GradCheckReport};
pub use graph::{Graph, Mode, Var, MASK_VALUE};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
