//! Synthetic data: truth simulated on a fine grid, inverted on a coarse one.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::ObservationModel;
use crate::error::{EkiError, Result};
use crate::forward::slice::SliceForward;
use crate::priors::{GridSpec, Region, SlicePrior};
use crate::rng::{self, StreamPurpose};

pub const DEFAULT_NOISE_FRACTION: f64 = 0.02;

/// Noise-free truth kept for coverage diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub grid: GridSpec,
    pub theta: Vec<f64>,
    pub log_permeability: Vec<f64>,
    pub upflow_rate: f64,
    pub interface_depth: Vec<f64>,
    pub regions: Vec<Region>,
    pub temperature: Vec<f64>,
    pub observations: Vec<f64>,
}

/// Noisy data with i.i.d. Gaussian errors of standard deviation `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub y: Vec<f64>,
    pub noise_std: f64,
}

impl ObservationRecord {
    /// `C_eps = noise_std^2 I`. Fails for zero noise.
    pub fn to_model(&self) -> Result<ObservationModel> {
        if !(self.noise_std > 0.0) {
            return Err(EkiError::InvalidArgument(
                "observation noise must be positive to form a likelihood".into(),
            ));
        }
        let q = self.y.len();
        ObservationModel::diagonal(
            DVector::from_column_slice(&self.y),
            DVector::from_element(q, self.noise_std * self.noise_std),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub truth: TruthRecord,
    pub observations: ObservationRecord,
}

/// Draws a truth parameter vector from the (fine-grid) prior.
pub fn draw_truth_theta(prior: &SlicePrior, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, 0, StreamPurpose::Truth, 0);
    (0..prior.dim())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

/// Simulates `truth_theta` on the fine model and perturbs the observations
/// with noise of standard deviation `noise_fraction * max(observations)`.
///
/// `coarse` is the inversion model; its wells must match the fine model's
/// so that the data are comparable with its predictions.
pub fn generate_synthetic_data(
    truth_theta: &[f64],
    fine: &SliceForward,
    coarse: &SliceForward,
    noise_fraction: f64,
    seed: u64,
) -> Result<SyntheticData> {
    if !(noise_fraction >= 0.0 && noise_fraction.is_finite()) {
        return Err(EkiError::InvalidArgument(format!(
            "noise fraction {noise_fraction}"
        )));
    }
    if fine.spec().wells != coarse.spec().wells {
        return Err(EkiError::Config(
            "fine and coarse models observe different wells".into(),
        ));
    }
    if truth_theta.len() != fine.prior().dim() {
        return Err(EkiError::Dimension(format!(
            "truth vector has {} entries, fine prior {}",
            truth_theta.len(),
            fine.prior().dim()
        )));
    }
    let sim = fine
        .simulate(truth_theta, None)
        .map_err(|e| EkiError::Solver(format!("truth simulation failed: {e}")))?;
    let clean = sim.observations;
    let peak = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let noise_std = noise_fraction * peak;
    if noise_fraction > 0.0 && !(noise_std > 0.0) {
        return Err(EkiError::InvalidArgument(
            "noise level relative to a non-positive maximum".into(),
        ));
    }
    let mut rng = rng::stream(seed, 0, StreamPurpose::ObservationNoise, 0);
    let y = clean
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + noise_std * z
        })
        .collect();
    Ok(SyntheticData {
        truth: TruthRecord {
            grid: sim.instance.grid,
            theta: truth_theta.to_vec(),
            log_permeability: sim.instance.log_permeability,
            upflow_rate: sim.instance.upflow_rate,
            interface_depth: sim.instance.interface_depth,
            regions: sim.instance.regions,
            temperature: sim.temperature.temperature,
            observations: clean,
        },
        observations: ObservationRecord { y, noise_std },
    })
}
