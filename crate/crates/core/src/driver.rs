//! The EKI-DMC iteration with failure resampling.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    data_misfit, eki_update, resample_failed, select_alpha_dmc, select_columns, EkiSchedule,
    ObservationModel, ParameterEnsemble, ParticleStatus, Perturbations, PredictionEnsemble,
};
use crate::error::{EkiError, Result};
use crate::forward::ForwardModel;
use crate::priors::PriorGraph;
use crate::rng::{self, StreamPurpose};
use crate::robustness::{
    apply_inflation, augment_with_variates, bootstrap_localisation, inflation_factor, InflationConfig,
    LocalisationConfig,
};
use crate::runner::parallel::{parallel_evaluate, Executor};

fn default_delta() -> f64 {
    1e-4
}

fn default_max_iterations() -> usize {
    30
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkiConfig {
    pub ensemble_size: usize,
    /// Jitter added to the resampling covariance.
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub localisation: Option<LocalisationConfig>,
    #[serde(default)]
    pub inflation: Option<InflationConfig>,
    /// Evaluate the final ensemble once more so its misfit is known.
    #[serde(default = "default_true")]
    pub evaluate_final: bool,
    /// Record wall-clock time per iteration (makes manifests differ between runs).
    #[serde(default)]
    pub record_timings: bool,
}

impl EkiConfig {
    pub fn new(ensemble_size: usize, seed: u64) -> Self {
        Self {
            ensemble_size,
            delta: default_delta(),
            seed,
            max_iterations: default_max_iterations(),
            localisation: None,
            inflation: None,
            evaluate_final: true,
            record_timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(EkiError::Config("ensemble_size must be >= 2".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(EkiError::Config("delta must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(EkiError::Config("max_iterations must be >= 1".into()));
        }
        if let Some(l) = &self.localisation {
            l.validate()?;
        }
        if let Some(i) = &self.inflation {
            i.validate()?;
        }
        Ok(())
    }
}

/// Min, mean and max of the successful particles' misfits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MisfitSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl MisfitSummary {
    pub fn of(misfits: &[f64]) -> Option<Self> {
        if misfits.is_empty() {
            return None;
        }
        Some(Self {
            min: misfits.iter().copied().fold(f64::INFINITY, f64::min),
            mean: misfits.iter().sum::<f64>() / misfits.len() as f64,
            max: misfits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub t: f64,
    pub alpha: f64,
    pub t_next: f64,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    pub misfit: MisfitSummary,
    pub rho: Option<f64>,
    pub localised: bool,
    pub wall_clock_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// `max_iterations` reached before `t = 1`.
    MaxIterations,
    /// Fewer than two particles succeeded.
    Aborted {
        iteration: usize,
        message: String,
    },
}

/// One stored ensemble: the parameters entering an iteration and, when
/// evaluated, their predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ParameterEnsemble,
    pub preds: Option<PredictionEnsemble>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub snapshots: Vec<Snapshot>,
    pub schedule: EkiSchedule,
    pub iterations: Vec<IterationRecord>,
    pub status: RunStatus,
    /// Misfit of the final ensemble, if it was evaluated.
    pub final_misfit: Option<MisfitSummary>,
}

impl RunResult {
    pub fn final_ensemble(&self) -> &ParameterEnsemble {
        &self
            .snapshots
            .last()
            .expect("run has at least one snapshot")
            .params
    }

    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

/// Draws the initial ensemble from the standard-normal unconstrained prior.
pub fn sample_initial_ensemble(dim: usize, size: usize, seed: u64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, size);
    for j in 0..size {
        let mut rng = rng::stream(seed, 0, StreamPurpose::Prior, j);
        out.set_column(j, &rng::standard_normal_vector(&mut rng, dim));
    }
    out
}

/// Misfits of the successful columns, in column order.
pub fn successful_misfits(preds: &PredictionEnsemble, obs: &ObservationModel) -> Result<Vec<f64>> {
    preds
        .successful_indices()
        .into_iter()
        .map(|j| data_misfit(&preds.values.column(j).into_owned(), obs))
        .collect()
}

fn reason_histogram(preds: &PredictionEnsemble) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for s in &preds.status {
        if let ParticleStatus::Failed(r) = s {
            *h.entry(r.as_str().to_string()).or_insert(0) += 1;
        }
    }
    h
}

/// Runs EKI with the data misfit controller until `t = 1`.
///
/// Per iteration: evaluate all particles, choose `alpha` from the successful
/// misfits, update the successful particles (optionally localised and with
/// appended inflation variates), inflate, then resample the failed ones.
pub fn run_eki<F: ForwardModel + ?Sized>(
    prior: &PriorGraph,
    forward: &F,
    obs: &ObservationModel,
    config: &EkiConfig,
    exec: &Executor,
) -> Result<RunResult> {
    config.validate()?;
    if forward.output_dim() != obs.dim() {
        return Err(EkiError::Dimension(format!(
            "forward model has {} outputs, data {}",
            forward.output_dim(),
            obs.dim()
        )));
    }
    let n = prior.dim();
    let q = obs.dim();
    let seed = config.seed;
    let mut params = sample_initial_ensemble(n, config.ensemble_size, seed);
    let mut schedule = EkiSchedule::new();
    let mut snapshots = Vec::new();
    let mut iterations = Vec::new();
    let mut status = RunStatus::MaxIterations;

    for i in 0..config.max_iterations {
        let clock = Instant::now();
        let preds = parallel_evaluate(&params, forward, exec, seed, i)?;
        let succ = preds.successful_indices();
        let failed = preds.failed_indices();
        snapshots.push(Snapshot {
            params: ParameterEnsemble::new(params.clone(), i)?,
            preds: Some(preds.clone()),
        });
        if succ.len() < 2 {
            status = RunStatus::Aborted {
                iteration: i,
                message: EkiError::DegenerateEnsemble(succ.len()).to_string(),
            };
            return Ok(RunResult {
                snapshots,
                schedule,
                iterations,
                status,
                final_misfit: None,
            });
        }
        let misfits = successful_misfits(&preds, obs)?;
        let t = schedule.current();
        let step = select_alpha_dmc(&misfits, q, t)?;

        let params_s = select_columns(&params, &succ);
        let preds_s = select_columns(&preds.values, &succ);
        let (augmented, variate_rows) = match &config.inflation {
            Some(c) => {
                let mut rng = rng::stream(seed, i, StreamPurpose::Variates, 0);
                let (a, r) = augment_with_variates(&params_s, c.n_variates, &mut rng)?;
                (a, Some(r))
            }
            None => (params_s, None),
        };
        let localiser = match &config.localisation {
            Some(c) => Some(bootstrap_localisation(
                &augmented, &preds_s, obs, step.alpha, c, seed, i,
            )?),
            None => None,
        };
        let updated = eki_update(
            &augmented,
            &preds_s,
            obs,
            step.alpha,
            Perturbations::Stochastic { seed, iteration: i },
            &succ,
            localiser.as_ref(),
        )?;
        let (updated, rho) = match variate_rows {
            Some(rows) => {
                let rho = inflation_factor(&updated.rows(rows.start, rows.len()).into_owned())?;
                let inflated = apply_inflation(&updated.rows(0, n).into_owned(), rho)?;
                (inflated, Some(rho))
            }
            None => (updated, None),
        };

        let mut next = DMatrix::zeros(n, config.ensemble_size);
        for (k, &j) in succ.iter().enumerate() {
            next.set_column(j, &updated.column(k));
        }
        if !failed.is_empty() {
            let draws = resample_failed(&updated, &failed, config.delta, seed, i)?;
            for (k, &j) in failed.iter().enumerate() {
                next.set_column(j, &draws.column(k));
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EkiError::NonFinite(format!("ensemble after iteration {i}")));
        }

        schedule.push(step.alpha, step.t_next);
        iterations.push(IterationRecord {
            iteration: i,
            t,
            alpha: step.alpha,
            t_next: step.t_next,
            failures: failed.len(),
            failure_reasons: reason_histogram(&preds),
            misfit: MisfitSummary::of(&misfits).expect("at least two misfits"),
            rho,
            localised: localiser.is_some(),
            wall_clock_s: config.record_timings.then(|| clock.elapsed().as_secs_f64()),
        });
        params = next;
        if schedule.is_complete() {
            status = RunStatus::Converged;
            break;
        }
    }

    let last = iterations.len();
    let mut final_misfit = None;
    let final_preds = if config.evaluate_final {
        let preds = parallel_evaluate(&params, forward, exec, seed, last)?;
        final_misfit = MisfitSummary::of(&successful_misfits(&preds, obs)?);
        Some(preds)
    } else {
        None
    };
    snapshots.push(Snapshot {
        params: ParameterEnsemble::new(params, last)?,
        preds: final_preds,
    });
    Ok(RunResult {
        snapshots,
        schedule,
        iterations,
        status,
        final_misfit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{FailureInjection, LinearForward};
    use nalgebra::DVector;

    fn linear_problem() -> (LinearForward, ObservationModel) {
        let a = DMatrix::from_fn(3, 4, |i, j| ((i * 4 + j) as f64 * 0.9).cos());
        let obs = ObservationModel::diagonal(
            DVector::from_vec(vec![0.5, -0.2, 1.0]),
            DVector::from_element(3, 0.04),
        )
        .unwrap();
        (LinearForward::new(a), obs)
    }

    #[test]
    fn schedule_telescopes_and_ends_at_one() {
        let (f, obs) = linear_problem();
        let r = run_eki(
            &PriorGraph::standard_normal(4),
            &f,
            &obs,
            &EkiConfig::new(50, 1),
            &Executor::default(),
        )
        .unwrap();
        assert!(r.converged());
        r.schedule.validate(true).unwrap();
        assert!((r.schedule.total_step() - 1.0).abs() < 1e-12);
        assert_eq!(r.snapshots.len(), r.iterations.len() + 1);
        for rec in &r.iterations {
            assert!(1.0 / rec.alpha <= 1.0 - rec.t + 1e-15);
        }
    }

    #[test]
    fn failures_are_resampled_to_full_size() {
        let (f, obs) = linear_problem();
        let f = FailureInjection::new(f, 0.3).unwrap();
        let mut cfg = EkiConfig::new(40, 2);
        cfg.inflation = Some(InflationConfig::default());
        cfg.localisation = Some(LocalisationConfig::default());
        let r = run_eki(
            &PriorGraph::standard_normal(4),
            &f,
            &obs,
            &cfg,
            &Executor::default(),
        )
        .unwrap();
        assert!(r.converged());
        assert!(r.iterations.iter().any(|it| it.failures > 0));
        for s in &r.snapshots {
            assert_eq!(s.params.size(), 40);
        }
        assert!(r.iterations.iter().all(|it| it.rho.is_some() && it.localised));
    }

    #[test]
    fn all_failures_abort() {
        let (f, obs) = linear_problem();
        let exec = Executor::new(1, Some(std::time::Duration::ZERO)).unwrap();
        let r = run_eki(
            &PriorGraph::standard_normal(4),
            &f,
            &obs,
            &EkiConfig::new(10, 0),
            &exec,
        )
        .unwrap();
        assert!(matches!(r.status, RunStatus::Aborted { iteration: 0, .. }));
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (f, obs) = linear_problem();
        let f = FailureInjection::new(f, 0.2).unwrap();
        let cfg = EkiConfig::new(30, 5);
        let prior = PriorGraph::standard_normal(4);
        let a = run_eki(&prior, &f, &obs, &cfg, &Executor::new(1, None).unwrap()).unwrap();
        let b = run_eki(&prior, &f, &obs, &cfg, &Executor::new(4, None).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subspace_property_without_modifiers() {
        // few particles relative to dimension so the span is a proper subspace
        let a = DMatrix::from_fn(3, 12, |i, j| ((i * 12 + j) as f64 * 0.37).sin());
        let f = LinearForward::new(a);
        let obs = ObservationModel::diagonal(
            DVector::from_vec(vec![1.0, 0.0, -1.0]),
            DVector::from_element(3, 0.1),
        )
        .unwrap();
        let mut cfg = EkiConfig::new(5, 3);
        cfg.max_iterations = 1;
        cfg.evaluate_final = false;
        let r = run_eki(
            &PriorGraph::standard_normal(12),
            &f,
            &obs,
            &cfg,
            &Executor::default(),
        )
        .unwrap();
        let before = &r.snapshots[0].params.values;
        let after = &r.snapshots[1].params.values;
        // affine span: theta_0 + span{theta_j - theta_0}
        let base = before.column(0).into_owned();
        let basis = DMatrix::from_fn(12, 4, |i, k| before[(i, k + 1)] - base[i]);
        let svd = basis.clone().svd(true, true);
        for c in after.column_iter() {
            let rhs = c.into_owned() - &base;
            let coef = svd.solve(&rhs, 1e-12).unwrap();
            let resid = (&basis * coef - &rhs).norm();
            assert!(resid < 1e-8, "residual {resid}");
        }
    }
}
