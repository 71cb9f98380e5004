//! Reverse-mode automatic differentiation over dense `ndarray` tensors.
//!
//! The engine is tape based: every operation on a [`Var`] appends a node to a
//! [`Graph`] together with a closure that maps the output gradient to the
//! gradients of its parents. [`Graph::backward`] walks the tape in reverse.
//!
//! Everything runs on the calling thread, so results are bit-reproducible for
//! identical inputs.

mod conv;
mod float;
mod graph;
pub mod gradcheck;
pub mod init;
mod ops;
pub mod optim;
mod params;

pub use float::Float;
pub use graph::{Grads, Graph, Var};
pub use params::{Binding, ParamId, ParamStore};

pub use ndarray;

/// Dynamic-rank array used for all tensor values.
pub type Array<T> = ndarray::ArrayD<T>;
