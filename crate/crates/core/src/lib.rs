//! Matrix product operator constructions for lattice Hamiltonians and
//! imaginary-time gates, uniform MPS evolution, and thermodynamic-limit
//! evaluators for energy density and variance.

// `!(x > 0.0)` guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod error;
pub mod expfit;
pub mod gate_mpo;
pub mod ham_mpo;
pub mod imps;
pub mod linalg;
pub mod peps;
pub mod reference;
pub mod thermo;

pub use error::{Error, Result};
pub use linalg::{DenseTensor, Scalar, ScalarKind, C64};
