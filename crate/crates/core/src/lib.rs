// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrangements;
pub mod baseline;
pub mod cli;
pub mod duality;
pub mod error;
pub mod games;
pub mod numerics;
pub mod procogan;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
