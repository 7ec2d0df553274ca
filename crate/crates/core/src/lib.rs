//! Monte Carlo laboratory for outlier eigenvalues of finite-rank deformed Wigner matrices.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod distributions;
pub mod ensembles;
pub mod error;
pub mod harness;
pub mod lanczos;
pub mod limits;
pub mod matrix;
pub mod spectral;
pub mod stats;
pub mod theory;

pub use error::{Result, RmtError};
