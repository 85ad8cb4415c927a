//! Small dense and banded linear-algebra helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EkiError, Result};

/// Square matrix stored by diagonals, `lower` sub- and `upper` super-diagonals.
///
/// Factorised in place by LU without pivoting, which is stable for the
/// diagonally dominant M-matrices produced by the finite-volume assemblies
/// in this crate.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    // row-major, width lower + upper + 1; entry (i, j) at i * width + (j + lower - i)
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.lower < i || j > i + self.upper {
            None
        } else {
            Some(i * self.width() + (j + self.lower - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band"));
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let j0 = i.saturating_sub(self.lower);
            let j1 = (i + self.upper).min(self.n - 1);
            *yi = (j0..=j1).map(|j| self.get(i, j) * x[j]).sum();
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// LU-factorises a copy of the matrix.
    pub fn factorize(&self) -> Result<BandedLu> {
        let mut lu = self.clone();
        let n = lu.n;
        for k in 0..n {
            let pivot = lu.get(k, k);
            if !pivot.is_finite() || pivot.abs() < f64::MIN_POSITIVE * 1e4 {
                return Err(EkiError::Solver(format!(
                    "zero or non-finite pivot {pivot:e} at row {k}"
                )));
            }
            let i_end = (k + lu.lower).min(n - 1);
            let j_end = (k + lu.upper).min(n - 1);
            for i in (k + 1)..=i_end {
                let s = lu.slot(i, k).unwrap();
                let factor = lu.data[s] / pivot;
                if factor == 0.0 {
                    continue;
                }
                lu.data[s] = factor;
                for j in (k + 1)..=j_end {
                    let ukj = lu.get(k, j);
                    if ukj != 0.0 {
                        let t = lu.slot(i, j).unwrap();
                        lu.data[t] -= factor * ukj;
                    }
                }
            }
        }
        Ok(BandedLu { lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.factorize()?.solve(rhs)
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    lu: BandedMatrix,
}

impl BandedLu {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = &self.lu;
        if rhs.len() != m.n {
            return Err(EkiError::Dimension(format!(
                "rhs length {} for system of size {}",
                rhs.len(),
                m.n
            )));
        }
        let mut x = rhs.to_vec();
        for i in 0..m.n {
            let j0 = i.saturating_sub(m.lower);
            let mut acc = x[i];
            for j in j0..i {
                acc -= m.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..m.n).rev() {
            let j1 = (i + m.upper).min(m.n - 1);
            let mut acc = x[i];
            for j in (i + 1)..=j1 {
                acc -= m.get(i, j) * x[j];
            }
            x[i] = acc / m.get(i, i);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(EkiError::Solver("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Arithmetic mean of the columns.
pub fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let j = m.ncols() as f64;
    m.column_sum() / j
}

/// Matrix of columns minus their mean.
pub fn deviations(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = column_mean(m);
    let mut dev = m.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    (mean, dev)
}

/// Unbiased sample covariance of the columns.
pub fn sample_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (_, dev) = deviations(m);
    let denom = (m.ncols() as f64 - 1.0).max(1.0);
    (&dev * dev.transpose()) / denom
}

/// Two-norm condition number of a symmetric matrix, from its eigenvalues.
pub fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_solve_matches_dense() {
        let n = 12;
        let mut a = BandedMatrix::zeros(n, 3, 2);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            if i >= 1 {
                a.add(i, i - 1, -1.5);
            }
            if i >= 3 {
                a.add(i, i - 3, -0.7);
            }
            if i + 2 < n {
                a.add(i, i + 2, 0.4 * i as f64 - 2.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.solve(&b).unwrap();
        let dense = a.to_dense().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-12);
        }
        let back = a.mul_vec(&x);
        for i in 0..n {
            assert!((back[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = BandedMatrix::zeros(3, 1, 1);
        assert!(a.solve(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn covariance_of_two_points() {
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        assert_eq!(sample_covariance(&m)[(0, 0)], 2.0);
        assert_eq!(column_mean(&m)[0], 1.0);
    }
}
