//! Dense linear algebra, softmax, reverse-mode differentiation and a
//! finite-difference gradient oracle.

mod gradcheck;
mod graph;
mod matrix;
mod params;

pub use gradcheck::{finite_diff_check, finite_diff_check_with_oracle, relative_error, GradCheckReport, ParamGradError};
pub use graph::{oja_update, slot_blend, Graph, NodeId};
pub use matrix::{softmax, Matrix, NamedMatrix};
pub(crate) use matrix::softmax_unchecked;
pub use params::{ParamEntry, ParamId, ParameterTape};
