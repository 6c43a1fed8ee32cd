//! Numerical laboratory for the modified mean curvature flow of radial graphs
//! over the upper hemisphere in the half-space model of hyperbolic space.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Tensor code indexes several arrays in lockstep.
#![allow(clippy::needless_range_loop)]

pub mod barriers;
pub mod error;
pub mod estimates;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod tensor;

pub use error::{MmcfError, Result};
