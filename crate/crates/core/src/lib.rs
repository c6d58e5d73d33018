//! Disturbance-decoupling state-feedback synthesis for LTI plants.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

// links the system OpenBLAS that backs both the conic solver and LAPACK calls
use openblas_src as _;

pub mod cli;
pub mod conic;
pub mod ddpf;
pub mod error;
pub mod geometry;
pub mod h2;
pub mod linalg;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
