//! Ensemble Kalman inversion with adaptive regularisation, failure-robust
//! resampling, localisation and inflation, plus geostatistical priors and a
//! small geothermal vertical-slice forward model.

// `!(x > 0.0)` deliberately rejects NaN; banded kernels read best as index loops
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod driver;
pub mod ensemble;
pub mod error;
pub mod forward;
pub mod linalg;
pub mod priors;
pub mod rng;
pub mod robustness;
pub mod runner;
pub mod special;

pub use error::{EkiError, Result};
