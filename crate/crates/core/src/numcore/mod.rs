//! Dense `f64` tensors and reverse-mode automatic differentiation.
//!
//! Computation is recorded eagerly on a [`Tape`]: every operation evaluates its
//! value immediately and appends a node; [`Tape::backward`] replays the adjoint
//! rules in reverse order. One tape per optimization step; call
//! [`Tape::clear`] (or build a new tape) between steps.

mod gradcheck;
mod tape;
mod tensor;
mod vector;

pub use gradcheck::{gradient_check, relative_error, Coordinate, GradCheckReport, REL_ERROR_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::argmax_first as tape_argmax_first;
pub use tensor::Tensor;
pub use vector::{cosine_similarity, l2_normalize, softmax, Normalized, DEGENERACY_EPS};
