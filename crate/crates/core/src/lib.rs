//! Parametrization-method computation of lower dimensional elliptic
//! invariant tori of Hamiltonian systems, together with their normal
//! bundles, normal frequencies and the parameters that keep those
//! frequencies fixed.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohomology;
pub mod error;
pub mod fourier;
pub mod frame;
pub mod init;
pub mod model;
pub mod newton;
pub mod verify;

pub use error::{Result, TorusError};
pub use fourier::{FourierSeries, Grid};
