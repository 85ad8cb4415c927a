use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::linalg::symmetric_condition;

/// Squared-exponential Gaussian process for a horizontal interface depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfacePrior {
    pub mean: f64,
    pub sigma: f64,
    pub lengthscale: f64,
}

impl Default for InterfacePrior {
    fn default() -> Self {
        Self {
            mean: -350.0,
            sigma: 80.0,
            lengthscale: 500.0,
        }
    }
}

impl InterfacePrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.lengthscale > 0.0 && self.mean.is_finite()) {
            return Err(EkiError::InvalidArgument(format!(
                "invalid interface prior {self:?}"
            )));
        }
        Ok(())
    }

    /// Lower Cholesky factor of the covariance at `x_coords`, with jitter
    /// `1e-8 sigma^2` escalated tenfold up to `1e-4 sigma^2` on failure.
    pub fn factor(&self, x_coords: &[f64]) -> Result<DMatrix<f64>> {
        self.validate()?;
        if x_coords.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EkiError::InvalidArgument(
                "interface coordinates must be strictly increasing".into(),
            ));
        }
        let n = x_coords.len();
        let var = self.sigma * self.sigma;
        let l2 = self.lengthscale * self.lengthscale;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            var * (-(x_coords[i] - x_coords[j]).powi(2) / (2.0 * l2)).exp()
        });
        let mut jitter = 1e-8 * var;
        loop {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = Cholesky::new(m) {
                return Ok(ch.l());
            }
            jitter *= 10.0;
            if jitter > 1e-4 * var * (1.0 + 1e-9) {
                return Err(EkiError::IllConditioned {
                    context: "interface covariance".into(),
                    condition: symmetric_condition(&cov),
                });
            }
        }
    }

    pub fn sample_with_factor(&self, factor: &DMatrix<f64>, white_noise: &[f64]) -> Result<Vec<f64>> {
        if white_noise.len() != factor.nrows() {
            return Err(EkiError::Dimension(format!(
                "interface noise has {} entries, expected {}",
                white_noise.len(),
                factor.nrows()
            )));
        }
        let v = factor * DVector::from_column_slice(white_noise);
        Ok(v.iter().map(|d| self.mean + d).collect())
    }
}

/// Interface depths at `x_coords`: `mean + L white_noise`.
pub fn sample_interface_gp(
    white_noise: &[f64],
    mean: f64,
    sigma: f64,
    ell: f64,
    x_coords: &[f64],
) -> Result<Vec<f64>> {
    let prior = InterfacePrior {
        mean,
        sigma,
        lengthscale: ell,
    };
    let factor = prior.factor(x_coords)?;
    prior.sample_with_factor(&factor, white_noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_gives_mean() {
        let x: Vec<f64> = (0..25).map(|i| 30.0 + 60.0 * i as f64).collect();
        let out = sample_interface_gp(&[0.0; 25], -350.0, 80.0, 500.0, &x).unwrap();
        assert!(out.iter().all(|v| *v == -350.0));
    }

    #[test]
    fn single_point() {
        let out = sample_interface_gp(&[1.0], -350.0, 80.0, 500.0, &[750.0]).unwrap();
        assert!((out[0] + 270.0).abs() < 1e-4);
    }

    #[test]
    fn unsorted_coordinates_rejected() {
        assert!(sample_interface_gp(&[0.0, 0.0], -350.0, 80.0, 500.0, &[2.0, 1.0]).is_err());
    }
}
