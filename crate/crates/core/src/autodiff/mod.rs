//! Small reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! Values live on a [`Tape`] in the order they were computed; [`Var`] is a
//! cheap copyable handle to one of them. Calling [`Tape::backward`] on a
//! scalar walks the tape once in reverse. New differentiable operations
//! plug in through the [`Function`] trait, which is how the continued
//! fraction layer supplies its analytic gradient.

mod cf_layer;
pub mod ops;
mod tape;
mod tensor;

pub use cf_layer::{cf_layer, cf_layer_eval, CfKernel, CfLayerFunction};
pub use tape::{Function, Gradients, Tape, Var};
pub use tensor::Tensor;
