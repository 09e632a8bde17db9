//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] in execution order; [`Tape::backward`]
//! walks the tape once in reverse. Reductions run sequentially so results do
//! not depend on thread count.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod selections;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{gradcheck, relative_error, GradcheckReport, STEP};
pub use selections::Selections;
pub use tape::{Fault, Gradients, Tape, Var};
pub use tensor::Tensor;
