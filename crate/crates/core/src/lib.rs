//! Lexical complexity prediction with adversarial domain, language and task
//! adaptation, on a self-contained reverse-mode autodiff engine.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
