#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod meanfield;
pub mod model;
pub mod normal;
pub mod prior;
pub mod sampler;
pub mod seeds;
pub mod quadrature;

pub use error::{Error, Result};
