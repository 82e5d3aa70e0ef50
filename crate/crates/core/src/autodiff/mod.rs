//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in execution order; [`Tape::backward`]
//! walks it in reverse. Tapes are single-owner; build one per forward pass.

mod check;
mod tape;
mod tensor;

pub use check::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
