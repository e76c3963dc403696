//! Tape-style reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! A [`Graph`] records each operation as it is evaluated. [`Graph::backward`]
//! walks the record in reverse and returns [`Gradients`]; parameter gradients
//! are then folded into a [`ParamStore`] with [`ParamStore::accumulate`], which
//! adds to whatever is already there until [`ParamStore::zero_grads`] is called.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, CheckPrecision, GradCheckReport, Objective};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
