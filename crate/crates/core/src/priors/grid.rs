use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};

/// Regular cell-centred grid on a vertical slice `(x1, x3)`.
///
/// Cells are indexed `k * nx + i` with `i` along `x1` and `k` counted upward
/// from the bottom row. `origin` is the lower-left domain corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    pub origin: (f64, f64),
}

impl GridSpec {
    pub fn new(nx: usize, nz: usize, dx: f64, dz: f64, origin: (f64, f64)) -> Result<Self> {
        let g = Self {
            nx,
            nz,
            dx,
            dz,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    /// Grid covering `[x0, x0 + width] x [z0, z0 + height]` with the given cell counts.
    pub fn covering(nx: usize, nz: usize, width: f64, height: f64, origin: (f64, f64)) -> Result<Self> {
        Self::new(nx, nz, width / nx as f64, height / nz as f64, origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.nz < 2 {
            return Err(EkiError::InvalidArgument(format!(
                "grid needs at least 2x2 cells, got {}x{}",
                self.nx, self.nz
            )));
        }
        if !(self.dx > 0.0 && self.dz > 0.0 && self.dx.is_finite() && self.dz.is_finite()) {
            return Err(EkiError::InvalidArgument("cell sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn index(&self, i: usize, k: usize) -> usize {
        k * self.nx + i
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn x_centre(&self, i: usize) -> f64 {
        self.origin.0 + (i as f64 + 0.5) * self.dx
    }

    pub fn z_centre(&self, k: usize) -> f64 {
        self.origin.1 + (k as f64 + 0.5) * self.dz
    }

    pub fn centre(&self, cell: usize) -> (f64, f64) {
        let (i, k) = self.coords(cell);
        (self.x_centre(i), self.z_centre(k))
    }

    pub fn x_centres(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x_centre(i)).collect()
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        self.nz as f64 * self.dz
    }

    pub fn top(&self) -> f64 {
        self.origin.1 + self.height()
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.origin.0 && x <= self.origin.0 + self.width() && z >= self.origin.1 && z <= self.top()
    }

    /// Cell whose centre is nearest to `(x, z)`; ties go to the lower index.
    pub fn nearest_cell(&self, x: f64, z: f64) -> usize {
        let fi = ((x - self.origin.0) / self.dx - 0.5).round();
        let fk = ((z - self.origin.1) / self.dz - 0.5).round();
        let i = fi.clamp(0.0, (self.nx - 1) as f64) as usize;
        let k = fk.clamp(0.0, (self.nz - 1) as f64) as usize;
        self.index(i, k)
    }
}
