//! Lower and upper bounds on the value of utility maximisation under the
//! Heston model, from simulated dual processes and their closed-form and
//! Fourier-cosine special cases.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod closedform;
pub mod config;
pub mod cosmethod;
pub mod error;
pub mod mcbounds;
pub mod model;
pub mod normal;
pub mod output;
pub mod riccati;
pub mod roots;
pub mod simulate;
pub mod stats;

pub use error::{HdbError, Result};
