//! Machine-generated text detection with locally calibrated likelihood ratios.
//!
//! Token scores from a scoring model are compared against what human and
//! machine text typically produce in the same region of hidden-state space,
//! rather than against a single global threshold.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod calib;
pub mod corpus;
pub mod detector;
pub mod dmap;
mod error;
pub mod eval;
pub mod features;
pub mod scorers;
pub mod synth;

pub use error::{Error, Result};
