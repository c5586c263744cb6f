// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod ordinal;
pub mod params;
pub mod rng;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
