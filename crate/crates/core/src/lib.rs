//! Behaviour distillation: evolving tiny synthetic state-action datasets
//! whose behaviour-cloning consumption trains control policies.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod dataset;
pub mod engine;
pub mod env;
pub mod error;
pub mod es;
pub mod gradcheck;
pub mod harness;
pub mod matrix;
pub mod nn;
pub mod normalizer;
pub mod supervised;

pub use error::{Error, Result};
pub use matrix::{Matrix, Real};
