//! Semi-parametric angular-radial (SPAR) modelling of multivariate extremes.
//!
//! Observations are split into a radius `r = ‖x‖₂` and a direction `w = x / r`
//! on the unit hypersphere. The angular density is estimated with a
//! power-spherical kernel density estimate, while the radial tail above an
//! angle-dependent threshold `u(w)` is a generalized Pareto distribution whose
//! parameters are neural-network functions of `w`.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, CSV handling and
//! the command-line front end live in the companion `spar` crate.
//!
//! Module overview:
//!
//! - [`geometry`]: polar transforms, sphere grids, Householder reflections.
//! - [`angular`]: power-spherical kernels, bandwidth selection and sampling.
//! - [`nnet`]: a small ReLU multilayer perceptron trained with ADAM.
//! - [`radial`]: quantile-regression threshold and GP tail heads.
//! - [`spar`]: the assembled model, contours and simulation.
//! - [`diagnostics`]: cell counts, binomial bounds, QQ data, bootstrap.
//! - [`preprocess`]: metocean component transforms and normalisation.
//! - [`synthetic`]: synthetic data with known tail parameters.

#![no_std]
// Guards such as `!(x > 0.0)` are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod angular;
pub mod diagnostics;
mod error;
pub mod geometry;
pub mod linalg;
pub mod nnet;
pub mod preprocess;
pub mod radial;
pub mod random;
pub mod spar;
pub mod special;
pub mod synthetic;

pub use error::{Error, Result};
pub use linalg::Matrix;
