// `!(x > 0.0)` style checks deliberately reject NaN; numeric kernels index
// several parallel buffers per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod campaign;
pub mod config;
pub mod env;
pub mod error;
pub mod heuristic;
pub mod metrics;
pub mod rl;
pub mod spdc;

pub use error::{Error, Result};
