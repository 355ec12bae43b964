//! Data-driven LQR with on-policy learning: RLS identification of the plant,
//! policy-gradient updates of the gain, and a dither exosystem keeping the
//! closed-loop data informative.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod avganalysis;
pub mod cli;
pub mod cloop;
pub mod config;
pub mod dither;
pub mod error;
pub mod learner;
pub mod linalg;
pub mod lqr;

pub use error::{Error, Result};
