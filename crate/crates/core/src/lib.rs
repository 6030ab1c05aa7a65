// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compile;
pub mod error;
pub mod invert;
pub mod lowerbound;
pub mod models;
pub mod nets;
pub mod par;
pub mod pipeline;
pub mod potential;
pub mod rng;
pub mod sampler;
pub mod verify;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
