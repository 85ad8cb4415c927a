//! Ensemble statistics and the stochastic EKI particle update.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::linalg::{deviations, symmetric_condition};
use crate::rng::{self, StreamPurpose};
use crate::robustness::LocalisationMatrix;

/// Unconstrained particles, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEnsemble {
    pub values: DMatrix<f64>,
    pub iteration: usize,
}

impl ParameterEnsemble {
    pub fn new(values: DMatrix<f64>, iteration: usize) -> Result<Self> {
        if values.ncols() < 2 {
            return Err(EkiError::InvalidArgument(format!(
                "ensemble needs at least 2 particles, got {}",
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EkiError::NonFinite("parameter ensemble".into()));
        }
        Ok(Self { values, iteration })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn size(&self) -> usize {
        self.values.ncols()
    }
}

/// Why a forward evaluation did not produce usable predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    NonFinite,
    NonConvergence,
    Timeout,
    Injected,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::NonFinite => "non_finite",
            FailureReason::NonConvergence => "non_convergence",
            FailureReason::Timeout => "timeout",
            FailureReason::Injected => "injected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "non_finite" => FailureReason::NonFinite,
            "non_convergence" => FailureReason::NonConvergence,
            "timeout" => FailureReason::Timeout,
            "injected" => FailureReason::Injected,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleStatus {
    Success,
    Failed(FailureReason),
}

impl ParticleStatus {
    pub fn is_success(self) -> bool {
        matches!(self, ParticleStatus::Success)
    }
}

/// Forward-model outputs, one column per particle. Failed columns hold NaN.
#[derive(Debug, Clone)]
pub struct PredictionEnsemble {
    pub values: DMatrix<f64>,
    pub status: Vec<ParticleStatus>,
}

impl PredictionEnsemble {
    pub fn new(values: DMatrix<f64>, status: Vec<ParticleStatus>) -> Result<Self> {
        if status.len() != values.ncols() {
            return Err(EkiError::Dimension(format!(
                "{} status entries for {} columns",
                status.len(),
                values.ncols()
            )));
        }
        for (j, s) in status.iter().enumerate() {
            if s.is_success() && values.column(j).iter().any(|v| !v.is_finite()) {
                return Err(EkiError::NonFinite(format!("successful prediction column {j}")));
            }
        }
        Ok(Self { values, status })
    }

    pub fn successful_indices(&self) -> Vec<usize> {
        (0..self.status.len())
            .filter(|&j| self.status[j].is_success())
            .collect()
    }

    pub fn failed_indices(&self) -> Vec<usize> {
        (0..self.status.len())
            .filter(|&j| !self.status[j].is_success())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

// exact bitwise equality, NaN-in-failed-columns included
impl PartialEq for PredictionEnsemble {
    fn eq(&self, other: &Self) -> bool {
        self.status == other.status
            && self.values.shape() == other.values.shape()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Selects the given columns of a matrix.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, k| m[(i, cols[k])])
}

/// Observation error covariance, kept diagonal when possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCovariance {
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

/// Data vector `y` with its additive Gaussian error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    y: DVector<f64>,
    cov: NoiseCovariance,
    dense: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
}

impl ObservationModel {
    pub fn diagonal(y: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        if y.len() != variances.len() {
            return Err(EkiError::Dimension(format!(
                "y has {} entries, covariance diagonal {}",
                y.len(),
                variances.len()
            )));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(EkiError::InvalidArgument(
                "noise variances must be positive and finite".into(),
            ));
        }
        Self::check_y(&y)?;
        let dense = DMatrix::from_diagonal(&variances);
        let chol_lower = DMatrix::from_diagonal(&variances.map(f64::sqrt));
        Ok(Self {
            y,
            cov: NoiseCovariance::Diagonal(variances.iter().copied().collect()),
            dense,
            chol_lower,
        })
    }

    pub fn dense(y: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != y.len() || cov.ncols() != y.len() {
            return Err(EkiError::Dimension("covariance must be q x q".into()));
        }
        Self::check_y(&y)?;
        if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax() {
            return Err(EkiError::InvalidArgument("covariance not symmetric".into()));
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| EkiError::IllConditioned {
            context: "observation covariance is not positive definite".into(),
            condition: symmetric_condition(&cov),
        })?;
        let rows = cov.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(Self {
            y,
            cov: NoiseCovariance::Dense(rows),
            chol_lower: chol.l(),
            dense: cov,
        })
    }

    pub fn from_parts(y: Vec<f64>, cov: NoiseCovariance) -> Result<Self> {
        let q = y.len();
        let y = DVector::from_vec(y);
        match cov {
            NoiseCovariance::Diagonal(d) => Self::diagonal(y, DVector::from_vec(d)),
            NoiseCovariance::Dense(rows) => {
                if rows.len() != q || rows.iter().any(|r| r.len() != q) {
                    return Err(EkiError::Dimension("covariance must be q x q".into()));
                }
                Self::dense(y, DMatrix::from_fn(q, q, |i, j| rows[i][j]))
            }
        }
    }

    fn check_y(y: &DVector<f64>) -> Result<()> {
        if y.is_empty() {
            return Err(EkiError::InvalidArgument("empty data vector".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EkiError::NonFinite("data vector".into()));
        }
        Ok(())
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn covariance_spec(&self) -> &NoiseCovariance {
        &self.cov
    }

    /// `C_eps^{-1} r`.
    fn precision_apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.cov {
            NoiseCovariance::Diagonal(d) => {
                DVector::from_iterator(r.len(), r.iter().zip(d).map(|(ri, di)| ri / di))
            }
            NoiseCovariance::Dense(_) => {
                let l = &self.chol_lower;
                let z = l.solve_lower_triangular(r).expect("factor is nonsingular");
                l.transpose()
                    .solve_upper_triangular(&z)
                    .expect("factor is nonsingular")
            }
        }
    }

    /// A draw from `N(0, scale * C_eps)`.
    pub fn sample_noise<R: rand::Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> DVector<f64> {
        let z = rng::standard_normal_vector(rng, self.dim());
        (&self.chol_lower * z) * scale.sqrt()
    }
}

/// Half the `C_eps`-weighted squared residual between data and `pred`.
pub fn data_misfit(pred: &DVector<f64>, obs: &ObservationModel) -> Result<f64> {
    if pred.len() != obs.dim() {
        return Err(EkiError::Dimension(format!(
            "prediction has {} entries, data {}",
            pred.len(),
            obs.dim()
        )));
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(EkiError::NonFinite("prediction".into()));
    }
    let r = obs.y() - pred;
    Ok(0.5 * r.dot(&obs.precision_apply(&r)))
}

/// The sequence of tempering times and the regularisation parameter used at
/// each step. `times[i + 1] - times[i] == 1 / alphas[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkiSchedule {
    pub times: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl EkiSchedule {
    pub fn new() -> Self {
        Self {
            times: vec![0.0],
            alphas: Vec::new(),
        }
    }

    pub fn push(&mut self, alpha: f64, t_next: f64) {
        self.alphas.push(alpha);
        self.times.push(t_next);
    }

    pub fn current(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn is_complete(&self) -> bool {
        self.current() >= 1.0
    }

    pub fn steps(&self) -> usize {
        self.alphas.len()
    }

    /// `sum_i 1 / alpha_i`; equals one for a complete schedule.
    pub fn total_step(&self) -> f64 {
        self.alphas.iter().map(|a| 1.0 / a).sum()
    }

    /// Checks the schedule invariants. `complete` additionally requires `t = 1`.
    pub fn validate(&self, complete: bool) -> Result<()> {
        if self.times.first() != Some(&0.0) {
            return Err(EkiError::InvalidArgument("schedule must start at t = 0".into()));
        }
        if self.times.len() != self.alphas.len() + 1 {
            return Err(EkiError::InvalidArgument("one alpha per step required".into()));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) || w[1] > 1.0 {
                return Err(EkiError::InvalidArgument(format!(
                    "schedule times not strictly increasing within [0, 1] at step {i}"
                )));
            }
            let h = 1.0 / self.alphas[i];
            if (w[1] - w[0] - h).abs() > 1e-12 {
                return Err(EkiError::InvalidArgument(format!(
                    "step {i}: t increment {} disagrees with 1/alpha = {h}",
                    w[1] - w[0]
                )));
            }
        }
        if complete && self.current() != 1.0 {
            return Err(EkiError::InvalidArgument("schedule does not end at t = 1".into()));
        }
        Ok(())
    }
}

impl Default for EkiSchedule {
    fn default() -> Self {
        Self::new()
    }
}

/// Ensemble means and (cross-)covariances.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean_theta: DVector<f64>,
    pub mean_g: DVector<f64>,
    pub cov_tg: DMatrix<f64>,
    pub cov_gg: DMatrix<f64>,
}

/// Means and unbiased (cross-)covariances of matched parameter and
/// prediction columns.
pub fn estimate_stats(params: &DMatrix<f64>, preds: &DMatrix<f64>) -> Result<EnsembleStats> {
    let j = params.ncols();
    if preds.ncols() != j {
        return Err(EkiError::Dimension(format!(
            "{} parameter columns, {} prediction columns",
            j,
            preds.ncols()
        )));
    }
    if j < 2 {
        return Err(EkiError::DegenerateEnsemble(j));
    }
    let (mean_theta, dt) = deviations(params);
    let (mean_g, dg) = deviations(preds);
    let denom = (j - 1) as f64;
    let dg_t = dg.transpose();
    let cov_tg = (&dt * &dg_t) / denom;
    let mut cov_gg = (&dg * &dg_t) / denom;
    // exact symmetry regardless of summation order
    for r in 0..cov_gg.nrows() {
        for c in 0..r {
            let v = 0.5 * (cov_gg[(r, c)] + cov_gg[(c, r)]);
            cov_gg[(r, c)] = v;
            cov_gg[(c, r)] = v;
        }
    }
    Ok(EnsembleStats {
        mean_theta,
        mean_g,
        cov_tg,
        cov_gg,
    })
}

/// Outcome of one data-misfit-controller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmcStep {
    pub alpha: f64,
    pub t_next: f64,
}

/// Mean and unbiased variance of the misfits.
pub fn misfit_moments(misfits: &[f64]) -> (f64, f64) {
    let n = misfits.len() as f64;
    let mean = misfits.iter().sum::<f64>() / n;
    let var = if misfits.len() > 1 {
        misfits.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Chooses the regularisation parameter with the data misfit controller.
pub fn select_alpha_dmc(misfits: &[f64], q: usize, t_current: f64) -> Result<DmcStep> {
    if misfits.is_empty() {
        return Err(EkiError::InvalidArgument("no misfits supplied".into()));
    }
    if misfits.iter().any(|m| !m.is_finite()) {
        return Err(EkiError::NonFinite("misfit".into()));
    }
    if !(0.0..1.0).contains(&t_current) {
        return Err(EkiError::InvalidArgument(format!(
            "current time {t_current} outside [0, 1)"
        )));
    }
    let (mean, var) = misfit_moments(misfits);
    let q = q as f64;
    let mean_term = if mean > 0.0 {
        q / (2.0 * mean)
    } else {
        f64::INFINITY
    };
    let var_term = if var > 0.0 {
        (q / (2.0 * var)).sqrt()
    } else {
        f64::INFINITY
    };
    let remaining = 1.0 - t_current;
    let step = mean_term.max(var_term);
    if step >= remaining {
        return Ok(DmcStep {
            alpha: 1.0 / remaining,
            t_next: 1.0,
        });
    }
    let t_next = t_current + step;
    Ok(DmcStep {
        alpha: 1.0 / step,
        t_next: t_next.min(1.0),
    })
}

/// `K = C_tg (C_gg + alpha C_eps)^{-1}` through a Cholesky factorisation.
pub fn compute_kalman_gain(
    stats: &EnsembleStats,
    obs: &ObservationModel,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let q = obs.dim();
    if stats.cov_gg.nrows() != q || stats.cov_tg.ncols() != q {
        return Err(EkiError::Dimension(format!(
            "statistics have {} outputs, data {}",
            stats.cov_gg.nrows(),
            q
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(EkiError::InvalidArgument(format!("alpha = {alpha}")));
    }
    let system = &stats.cov_gg + obs.covariance() * alpha;
    let chol: Cholesky<f64, Dyn> = Cholesky::new(system.clone()).ok_or_else(|| EkiError::IllConditioned {
        context: "C_gg + alpha C_eps".into(),
        condition: symmetric_condition(&system),
    })?;
    let gain_t = chol.solve(&stats.cov_tg.transpose());
    Ok(gain_t.transpose())
}

/// How the artificial observation perturbations are drawn.
#[derive(Debug, Clone, Copy)]
pub enum Perturbations {
    /// Per-particle stream keyed by `(seed, iteration, particle index)`.
    Stochastic { seed: u64, iteration: usize },
    /// All perturbations zero.
    Zero,
}

/// Applies the EKI update to the successful particles.
///
/// `params` and `preds` hold only the successful columns; `particle_ids`
/// gives each column's index in the full ensemble and keys its noise stream.
pub fn eki_update(
    params: &DMatrix<f64>,
    preds: &DMatrix<f64>,
    obs: &ObservationModel,
    alpha: f64,
    perturbations: Perturbations,
    particle_ids: &[usize],
    localiser: Option<&LocalisationMatrix>,
) -> Result<DMatrix<f64>> {
    if particle_ids.len() != params.ncols() {
        return Err(EkiError::Dimension("one particle id per column required".into()));
    }
    let stats = estimate_stats(params, preds)?;
    let mut gain = compute_kalman_gain(&stats, obs, alpha)?;
    if let Some(loc) = localiser {
        if loc.psi.shape() != gain.shape() {
            return Err(EkiError::Dimension(format!(
                "localisation matrix {:?} for gain {:?}",
                loc.psi.shape(),
                gain.shape()
            )));
        }
        gain.component_mul_assign(&loc.psi);
    }
    Ok(apply_gain(
        params,
        preds,
        obs,
        alpha,
        &gain,
        perturbations,
        particle_ids,
    ))
}

/// `theta_j + K (y + eps_j - G_j)` for every column.
pub fn apply_gain(
    params: &DMatrix<f64>,
    preds: &DMatrix<f64>,
    obs: &ObservationModel,
    alpha: f64,
    gain: &DMatrix<f64>,
    perturbations: Perturbations,
    particle_ids: &[usize],
) -> DMatrix<f64> {
    let mut out = params.clone();
    for (k, &pid) in particle_ids.iter().enumerate() {
        let mut target = obs.y().clone();
        if let Perturbations::Stochastic { seed, iteration } = perturbations {
            let mut rng = rng::stream(seed, iteration, StreamPurpose::Perturbation, pid);
            target += obs.sample_noise(&mut rng, alpha);
        }
        let innovation = target - preds.column(k);
        let delta = gain * innovation;
        let mut col = out.column_mut(k);
        col += delta;
    }
    out
}

/// Draws replacements for failed particles from `N(mu, C + delta I)`, where
/// `mu` and `C` are the empirical moments of the updated successful columns.
///
/// Sampled as `mu + D w / sqrt(J_s - 1) + sqrt(delta) z`, with `D` the
/// deviation matrix, so no dense `n x n` factorisation is formed.
pub fn resample_failed(
    updated_success: &DMatrix<f64>,
    failed_ids: &[usize],
    delta: f64,
    seed: u64,
    iteration: usize,
) -> Result<DMatrix<f64>> {
    let js = updated_success.ncols();
    if js < 2 {
        return Err(EkiError::DegenerateEnsemble(js));
    }
    if !(delta > 0.0) {
        return Err(EkiError::InvalidArgument(format!("delta = {delta}")));
    }
    let n = updated_success.nrows();
    let (mean, dev) = deviations(updated_success);
    let scale = 1.0 / ((js - 1) as f64).sqrt();
    let jitter = delta.sqrt();
    let mut out = DMatrix::zeros(n, failed_ids.len());
    for (k, &pid) in failed_ids.iter().enumerate() {
        let mut rng = rng::stream(seed, iteration, StreamPurpose::Resample, pid);
        let w = rng::standard_normal_vector(&mut rng, js);
        let z = rng::standard_normal_vector(&mut rng, n);
        let draw = &mean + (&dev * w) * scale + z * jitter;
        out.set_column(k, &draw);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_obs(y: f64, var: f64) -> ObservationModel {
        ObservationModel::diagonal(DVector::from_element(1, y), DVector::from_element(1, var)).unwrap()
    }

    #[test]
    fn stats_two_point_example() {
        let p = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let s = estimate_stats(&p, &p).unwrap();
        assert_eq!(s.mean_theta[0], 1.0);
        assert_eq!(s.mean_g[0], 1.0);
        assert_eq!(s.cov_tg[(0, 0)], 2.0);
        assert_eq!(s.cov_gg[(0, 0)], 2.0);
    }

    #[test]
    fn stats_identical_columns_vanish() {
        let p = DMatrix::from_element(3, 5, 1.7);
        let g = DMatrix::from_element(2, 5, -4.0);
        let s = estimate_stats(&p, &g).unwrap();
        assert_eq!(s.cov_tg.amax(), 0.0);
        assert_eq!(s.cov_gg.amax(), 0.0);
    }

    #[test]
    fn stats_need_two_columns() {
        let p = DMatrix::from_element(1, 1, 0.0);
        assert!(matches!(
            estimate_stats(&p, &p),
            Err(EkiError::DegenerateEnsemble(1))
        ));
    }

    #[test]
    fn misfit_examples() {
        let obs = scalar_obs(3.0, 4.0);
        assert_eq!(data_misfit(&DVector::from_element(1, 3.0), &obs).unwrap(), 0.0);
        assert_eq!(data_misfit(&DVector::from_element(1, 1.0), &obs).unwrap(), 0.5);
        assert!(data_misfit(&DVector::from_element(1, f64::NAN), &obs).is_err());
    }

    #[test]
    fn dense_and_diagonal_misfit_agree() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let var = DVector::from_vec(vec![0.5, 2.0, 1.5]);
        let a = ObservationModel::diagonal(y.clone(), var.clone()).unwrap();
        let b = ObservationModel::dense(y, DMatrix::from_diagonal(&var)).unwrap();
        let p = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let (ma, mb) = (data_misfit(&p, &a).unwrap(), data_misfit(&p, &b).unwrap());
        assert!((ma - mb).abs() < 1e-14);
    }

    #[test]
    fn dmc_scripted_example() {
        // m = 400, s^2 = 800 from two misfits 380, 420
        let misfits = [400.0 - 20.0, 400.0 + 20.0];
        let (m, v) = misfit_moments(&misfits);
        assert_eq!(m, 400.0);
        assert_eq!(v, 800.0);
        let step = select_alpha_dmc(&misfits, 80, 0.0).unwrap();
        assert!((step.alpha - 4.472_136).abs() < 1e-6);
        assert!((step.t_next - 0.223_607).abs() < 1e-6);
    }

    #[test]
    fn dmc_clamps_to_remaining_time() {
        // q / (2 m) = 40 with q = 80 => m = 1
        let step = select_alpha_dmc(&[0.9, 1.1], 80, 0.9).unwrap();
        assert!((step.alpha - 10.0).abs() < 1e-9);
        assert_eq!(step.t_next, 1.0);
    }

    #[test]
    fn dmc_equal_misfits_and_zero_mean() {
        let step = select_alpha_dmc(&[5.0, 5.0, 5.0], 10, 0.25).unwrap();
        assert_eq!(step.t_next, 1.0);
        let step = select_alpha_dmc(&[0.0, 0.0], 10, 0.5).unwrap();
        assert_eq!(step.t_next, 1.0);
        assert_eq!(step.alpha, 2.0);
        assert!(select_alpha_dmc(&[], 10, 0.0).is_err());
        assert!(select_alpha_dmc(&[1.0], 10, 1.0).is_err());
    }

    #[test]
    fn gain_examples() {
        let obs = scalar_obs(1.0, 1.0);
        let stats = EnsembleStats {
            mean_theta: DVector::zeros(1),
            mean_g: DVector::zeros(1),
            cov_tg: DMatrix::from_element(1, 1, 2.0),
            cov_gg: DMatrix::from_element(1, 1, 2.0),
        };
        let k = compute_kalman_gain(&stats, &obs, 1.0).unwrap();
        assert!((k[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        let k_big = compute_kalman_gain(&stats, &obs, 1e12).unwrap();
        assert!(k_big[(0, 0)].abs() < 1e-11);
        let zero = EnsembleStats {
            cov_tg: DMatrix::zeros(1, 1),
            ..stats
        };
        assert_eq!(compute_kalman_gain(&zero, &obs, 1.0).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn update_scalar_example() {
        let obs = scalar_obs(1.0, 1.0);
        let p = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let out = eki_update(&p, &p, &obs, 1.0, Perturbations::Zero, &[0, 1], None).unwrap();
        assert!((out[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((out[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn update_identical_particles_is_noop() {
        let obs = scalar_obs(1.0, 1.0);
        let p = DMatrix::from_element(2, 4, 0.3);
        let g = DMatrix::from_element(1, 4, 5.0);
        let pert = Perturbations::Stochastic {
            seed: 1,
            iteration: 0,
        };
        let out = eki_update(&p, &g, &obs, 2.0, pert, &[0, 1, 2, 3], None).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn resample_no_failures() {
        let p = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let out = resample_failed(&p, &[], 1e-4, 0, 0).unwrap();
        assert_eq!(out.ncols(), 0);
    }

    #[test]
    fn resample_collapsed_ensemble_is_jittered_copy() {
        let col = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let p = DMatrix::from_columns(&[col.clone(), col.clone(), col.clone()]);
        let out = resample_failed(&p, &[3, 4], 1e-4, 9, 2).unwrap();
        for k in 0..2 {
            let d = out.column(k) - &col;
            assert!(d.amax() < 1e-2 * 6.0);
            assert!(d.amax() > 0.0);
        }
        assert!(resample_failed(&p.columns(0, 1).into_owned(), &[1], 1e-4, 0, 0).is_err());
    }

    #[test]
    fn schedule_validation() {
        let mut s = EkiSchedule::new();
        s.push(4.0, 0.25);
        s.push(4.0 / 3.0, 1.0);
        s.validate(true).unwrap();
        assert!((s.total_step() - 1.0).abs() < 1e-15);
        let mut bad = EkiSchedule::new();
        bad.push(2.0, 0.4);
        assert!(bad.validate(false).is_err());
    }
}
