//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor).

pub mod gradcheck;
pub mod param;
pub mod tape;

pub use gradcheck::{grad_check, relative_error, relative_error_floor, GradCheckOptions, GradCheckReport, ParamCheck};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, NodeView, OpKind, Tape, Var};
