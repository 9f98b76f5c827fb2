//! Numerical toolkit for Ornstein-Uhlenbeck operators driven by degenerate
//! stable-like Levy noise.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fit;
pub mod geometry;
pub mod harness;
pub mod ipde;
pub mod kalman;
pub mod levy;
pub mod quadrature;
pub mod semigroup;
pub mod testfn;

pub use error::{Error, Result};
