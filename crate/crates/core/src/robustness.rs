//! Optional update modifiers: bootstrap gain localisation and adaptive
//! inflation driven by augmented random variates.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{compute_kalman_gain, estimate_stats, select_columns, ObservationModel};
use crate::error::{EkiError, Result};
use crate::linalg::deviations;
use crate::rng::{self, StreamPurpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalisationConfig {
    pub n_bootstrap: usize,
    pub beta: f64,
}

impl Default for LocalisationConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 50,
            beta: 0.6,
        }
    }
}

impl LocalisationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_bootstrap < 2 {
            return Err(EkiError::InvalidArgument("n_bootstrap must be >= 2".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(EkiError::InvalidArgument("beta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflationConfig {
    pub n_variates: usize,
}

impl Default for InflationConfig {
    fn default() -> Self {
        Self { n_variates: 100 }
    }
}

impl InflationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_variates < 2 {
            return Err(EkiError::InvalidArgument("n_variates must be >= 2".into()));
        }
        Ok(())
    }
}

/// Elementwise damping factors for the Kalman gain, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalisationMatrix {
    pub psi: DMatrix<f64>,
}

impl LocalisationMatrix {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            psi: DMatrix::from_element(rows, cols, 1.0),
        }
    }
}

/// Damping factor for a gain entry with bootstrap variability ratio `v`.
pub fn localisation_entry(v: f64, beta: f64) -> f64 {
    1.0 / (1.0 + v * v * (1.0 + 1.0 / (beta * beta)))
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Estimates a gain localisation matrix from bootstrap resamples of the
/// ensemble. Parameters and predictions are resampled jointly, and each
/// bootstrapped gain uses the same `alpha` and `C_eps` as the actual gain.
pub fn bootstrap_localisation(
    params: &DMatrix<f64>,
    preds: &DMatrix<f64>,
    obs: &ObservationModel,
    alpha: f64,
    config: &LocalisationConfig,
    seed: u64,
    iteration: usize,
) -> Result<LocalisationMatrix> {
    config.validate()?;
    let js = params.ncols();
    let gain = compute_kalman_gain(&estimate_stats(params, preds)?, obs, alpha)?;

    let boot: Vec<DMatrix<f64>> = (0..config.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, iteration, StreamPurpose::Bootstrap, b);
            let idx: Vec<usize> = (0..js).map(|_| rng.random_range(0..js)).collect();
            let stats = estimate_stats(&select_columns(params, &idx), &select_columns(preds, &idx))?;
            compute_kalman_gain(&stats, obs, alpha)
        })
        .collect::<Result<_>>()?;

    let mut psi = DMatrix::zeros(gain.nrows(), gain.ncols());
    let mut samples = vec![0.0; boot.len()];
    for c in 0..gain.ncols() {
        for r in 0..gain.nrows() {
            let k = gain[(r, c)];
            if k == 0.0 {
                continue;
            }
            for (s, kb) in samples.iter_mut().zip(&boot) {
                *s = kb[(r, c)];
            }
            let v = sample_std(&samples) / k;
            psi[(r, c)] = localisation_entry(v, config.beta);
        }
    }
    Ok(LocalisationMatrix { psi })
}

fn population_std(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = row.clone().count() as f64;
    let mean = row.clone().sum::<f64>() / n;
    (row.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Appends `n_variates` rows of standard-normal draws, each shifted and
/// scaled to ensemble mean exactly 0 and standard deviation exactly 1.
///
/// Returns the augmented matrix and the row range of the variates.
pub fn augment_with_variates<R: Rng + ?Sized>(
    params: &DMatrix<f64>,
    n_variates: usize,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Range<usize>)> {
    let (n, j) = params.shape();
    if j < 2 {
        return Err(EkiError::DegenerateEnsemble(j));
    }
    let mut out = params.clone().resize_vertically(n + n_variates, 0.0);
    for r in n..n + n_variates {
        let mut row: Vec<f64> = rng::standard_normal_vector(rng, j).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / j as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let sd = population_std(row.iter().copied());
        if sd == 0.0 {
            return Err(EkiError::DegenerateUpdate("variate row with zero spread".into()));
        }
        for (c, v) in row.iter().enumerate() {
            out[(r, c)] = v / sd;
        }
    }
    Ok((out, n..n + n_variates))
}

/// Reciprocal of the mean post-update standard deviation of the variates.
pub fn inflation_factor(variates: &DMatrix<f64>) -> Result<f64> {
    if variates.nrows() == 0 || variates.ncols() < 2 {
        return Err(EkiError::InvalidArgument("empty variate block".into()));
    }
    if variates.iter().any(|v| !v.is_finite()) {
        return Err(EkiError::NonFinite("variate block".into()));
    }
    let mean_sd = variates
        .row_iter()
        .map(|row| population_std(row.iter().copied()))
        .sum::<f64>()
        / variates.nrows() as f64;
    if mean_sd == 0.0 {
        return Err(EkiError::DegenerateUpdate(
            "all variate standard deviations are zero".into(),
        ));
    }
    Ok(1.0 / mean_sd)
}

/// Scales deviations from the ensemble mean by `rho`.
pub fn apply_inflation(params: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(EkiError::InvalidArgument(format!("rho = {rho}")));
    }
    let (mean, dev) = deviations(params);
    let mut out = dev * rho;
    for mut col in out.column_iter_mut() {
        col += &mean;
    }
    Ok(out)
}
