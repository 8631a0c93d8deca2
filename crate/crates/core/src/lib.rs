#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fieldio;
pub mod fokker_planck;
pub mod grid;
pub mod neural;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
