//! Command-line front end for semi-parametric angular-radial models: data
//! ingestion, configuration, the model file format and diagnostic tables.

// Guards such as `!(x > 0.0)` are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod model_file;

pub use config::RunConfig;
pub use error::{AppError, Result};
