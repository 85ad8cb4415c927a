//! Whittle-Matérn covariance and its stochastic-PDE sampler.

use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::linalg::{BandedLu, BandedMatrix};
use crate::priors::grid::GridSpec;
use crate::special::{bessel_k, gamma};

/// Robin coefficient per unit lengthscale normal to a boundary face.
pub const DEFAULT_ROBIN_FACTOR: f64 = 1.42;

/// Whittle-Matérn hyperparameters. `ell` holds one lengthscale per axis and
/// `lambda_robin` the Robin coefficient used on faces normal to that axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaternHyper {
    pub sigma: f64,
    pub ell: Vec<f64>,
    pub nu: f64,
    pub lambda_robin: Vec<f64>,
}

impl MaternHyper {
    /// Two-dimensional field with `nu = 2 - d/2 = 1` and the default Robin tuning.
    pub fn new_2d(sigma: f64, ell_x: f64, ell_z: f64) -> Result<Self> {
        let h = Self {
            sigma,
            ell: vec![ell_x, ell_z],
            nu: 1.0,
            lambda_robin: vec![DEFAULT_ROBIN_FACTOR * ell_x, DEFAULT_ROBIN_FACTOR * ell_z],
        };
        h.validate()?;
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(EkiError::InvalidArgument(format!("sigma = {}", self.sigma)));
        }
        if self.ell.is_empty() || self.ell.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(EkiError::InvalidArgument("lengthscales must be positive".into()));
        }
        if !(self.nu > 0.0) {
            return Err(EkiError::InvalidArgument(format!("nu = {}", self.nu)));
        }
        if self.lambda_robin.len() != self.ell.len() || self.lambda_robin.iter().any(|l| !(*l > 0.0)) {
            return Err(EkiError::InvalidArgument(
                "one positive Robin coefficient per axis".into(),
            ));
        }
        Ok(())
    }

    /// `sigma^2 2^d pi^(d/2) Gamma(nu + d/2) / Gamma(nu)`.
    pub fn spde_coefficient(&self) -> f64 {
        let d = self.dim() as f64;
        self.sigma.powi(2) * 2f64.powf(d) * std::f64::consts::PI.powf(d / 2.0) * gamma(self.nu + d / 2.0)
            / gamma(self.nu)
    }
}

/// Whittle-Matérn covariance between two points.
pub fn matern_covariance(x: &[f64], x_prime: &[f64], hyper: &MaternHyper) -> f64 {
    let r = x
        .iter()
        .zip(x_prime)
        .zip(&hyper.ell)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum::<f64>()
        .sqrt();
    matern_correlation(r, hyper.nu) * hyper.sigma.powi(2)
}

/// Matérn correlation at scaled distance `r`.
pub fn matern_correlation(r: f64, nu: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    r.powf(nu) * bessel_k(nu, r) / (2f64.powf(nu - 1.0) * gamma(nu))
}

/// Factorised SPDE operator for one `(hyper, grid)` pair.
#[derive(Debug, Clone)]
pub struct MaternSampler {
    grid: GridSpec,
    lu: BandedLu,
    rhs_scale: f64,
}

impl MaternSampler {
    pub fn new(hyper: &MaternHyper, grid: &GridSpec) -> Result<Self> {
        hyper.validate()?;
        grid.validate()?;
        if hyper.dim() != 2 || hyper.nu != 1.0 {
            return Err(EkiError::InvalidArgument(
                "the SPDE sampler supports d = 2 with nu = 1".into(),
            ));
        }
        let op = assemble_operator(hyper, grid);
        let lu = op.factorize()?;
        let rhs_scale =
            (hyper.spde_coefficient() * hyper.ell[0] * hyper.ell[1]).sqrt() / (grid.dx * grid.dz).sqrt();
        Ok(Self {
            grid: *grid,
            lu,
            rhs_scale,
        })
    }

    /// Field driven by the unit-normal vector `white_noise` (one entry per cell).
    pub fn sample(&self, white_noise: &[f64]) -> Result<Vec<f64>> {
        if white_noise.len() != self.grid.cells() {
            return Err(EkiError::Dimension(format!(
                "white noise has {} entries for {} cells",
                white_noise.len(),
                self.grid.cells()
            )));
        }
        let rhs: Vec<f64> = white_noise.iter().map(|w| w * self.rhs_scale).collect();
        self.lu.solve(&rhs)
    }
}

/// Finite-difference form of `I - div(L grad)` with Robin rows
/// `u + lambda du/dn = 0` on every boundary face.
pub fn assemble_operator(hyper: &MaternHyper, grid: &GridSpec) -> BandedMatrix {
    let (nx, nz) = (grid.nx, grid.nz);
    let (dx, dz) = (grid.dx, grid.dz);
    let (lx2, lz2) = (hyper.ell[0].powi(2), hyper.ell[1].powi(2));
    let cx = lx2 / (dx * dx);
    let cz = lz2 / (dz * dz);
    let bx = lx2 / (dx * (hyper.lambda_robin[0] + 0.5 * dx));
    let bz = lz2 / (dz * (hyper.lambda_robin[1] + 0.5 * dz));
    let mut a = BandedMatrix::zeros(grid.cells(), nx, nx);
    for k in 0..nz {
        for i in 0..nx {
            let c = grid.index(i, k);
            a.add(c, c, 1.0);
            let couple = |n: usize, w: f64, a: &mut BandedMatrix| {
                a.add(c, c, w);
                a.add(c, n, -w);
            };
            if i > 0 {
                couple(grid.index(i - 1, k), cx, &mut a);
            } else {
                a.add(c, c, bx);
            }
            if i + 1 < nx {
                couple(grid.index(i + 1, k), cx, &mut a);
            } else {
                a.add(c, c, bx);
            }
            if k > 0 {
                couple(grid.index(i, k - 1), cz, &mut a);
            } else {
                a.add(c, c, bz);
            }
            if k + 1 < nz {
                couple(grid.index(i, k + 1), cz, &mut a);
            } else {
                a.add(c, c, bz);
            }
        }
    }
    a
}

/// One draw of a centred Whittle-Matérn field on `grid`.
pub fn sample_wm_field(white_noise: &[f64], hyper: &MaternHyper, grid: &GridSpec) -> Result<Vec<f64>> {
    MaternSampler::new(hyper, grid)?.sample(white_noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_limits() {
        let h = MaternHyper::new_2d(1.3, 2.0, 0.5).unwrap();
        assert_eq!(matern_covariance(&[1.0, 1.0], &[1.0, 1.0], &h), 1.3f64.powi(2));
        let half = MaternHyper {
            nu: 0.5,
            ..MaternHyper::new_2d(1.0, 1.0, 1.0).unwrap()
        };
        let c = matern_covariance(&[0.0, 0.0], &[1.0, 0.0], &half);
        assert!((c - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn anisotropic_distance() {
        let h = MaternHyper::new_2d(1.0, 2.0, 0.5).unwrap();
        // (2, 0) and (0, 0.5) are both at unit scaled distance
        let a = matern_covariance(&[0.0, 0.0], &[2.0, 0.0], &h);
        let b = matern_covariance(&[0.0, 0.0], &[0.0, 0.5], &h);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn spde_coefficient_for_nu_one() {
        let h = MaternHyper::new_2d(2.0, 1.0, 1.0).unwrap();
        assert!((h.spde_coefficient() - 4.0 * std::f64::consts::PI * 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_and_linearity() {
        let grid = GridSpec::covering(8, 6, 1.0, 1.0, (0.0, 0.0)).unwrap();
        let h = MaternHyper::new_2d(0.8, 0.3, 0.2).unwrap();
        let zero = sample_wm_field(&vec![0.0; 48], &h, &grid).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let xi: Vec<f64> = (0..48).map(|c| ((c * 7919) % 13) as f64 / 6.0 - 1.0).collect();
        let xi2: Vec<f64> = xi.iter().map(|v| 2.0 * v).collect();
        let a = sample_wm_field(&xi, &h, &grid).unwrap();
        let b = sample_wm_field(&xi2, &h, &grid).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-10);
        }
        assert!(sample_wm_field(&xi[..10], &h, &grid).is_err());
    }

    #[test]
    fn operator_is_symmetric() {
        let grid = GridSpec::covering(5, 4, 2.0, 1.0, (0.0, 0.0)).unwrap();
        let h = MaternHyper::new_2d(1.0, 0.7, 0.4).unwrap();
        let a = assemble_operator(&h, &grid).to_dense();
        assert!((&a - a.transpose()).amax() < 1e-12);
    }
}
