use nalgebra::{DMatrix, DVector};

use crate::error::{EkiError, Result};
use crate::forward::{EvalContext, ForwardModel, ForwardOutcome};

/// `A theta`.
pub fn linear_gaussian_forward(a: &DMatrix<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
    if a.ncols() != theta.len() {
        return Err(EkiError::Dimension(format!(
            "matrix has {} columns, parameter {} entries",
            a.ncols(),
            theta.len()
        )));
    }
    Ok(a * theta)
}

/// Linear forward map used to check the update against Gaussian conditioning.
#[derive(Debug, Clone)]
pub struct LinearForward {
    pub a: DMatrix<f64>,
}

impl LinearForward {
    pub fn new(a: DMatrix<f64>) -> Self {
        Self { a }
    }

    /// Posterior mean and covariance for prior `N(0, I)` and noise `N(0, cov_eps)`.
    pub fn analytic_posterior(
        &self,
        y: &DVector<f64>,
        cov_eps: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.a.ncols();
        let prec_eps = cov_eps
            .clone()
            .cholesky()
            .ok_or_else(|| EkiError::InvalidArgument("noise covariance not SPD".into()))?
            .inverse();
        let at_p = self.a.transpose() * &prec_eps;
        let precision = DMatrix::identity(n, n) + &at_p * &self.a;
        let cov = precision
            .cholesky()
            .ok_or_else(|| EkiError::InvalidArgument("posterior precision not SPD".into()))?
            .inverse();
        let mean = &cov * (at_p * y);
        Ok((mean, cov))
    }
}

impl ForwardModel for LinearForward {
    fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    fn evaluate(&self, theta: &[f64], _ctx: &EvalContext) -> ForwardOutcome {
        match linear_gaussian_forward(&self.a, &DVector::from_column_slice(theta)) {
            Ok(v) => ForwardOutcome::Success(v.iter().copied().collect()).checked(),
            Err(_) => ForwardOutcome::Failure(crate::ensemble::FailureReason::NonFinite),
        }
    }
}
