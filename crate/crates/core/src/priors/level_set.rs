use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};

/// Ordered thresholds `c_1 < ... < c_{n-1}` (the outer `-inf`/`+inf` are
/// implicit) and one property value per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetConfig {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

impl LevelSetConfig {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let c = Self { thresholds, values };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.thresholds.len() + 1 {
            return Err(EkiError::InvalidArgument(format!(
                "{} thresholds need {} values, got {}",
                self.thresholds.len(),
                self.thresholds.len() + 1,
                self.values.len()
            )));
        }
        if self.thresholds.iter().any(|c| !c.is_finite()) {
            return Err(EkiError::InvalidArgument("thresholds must be finite".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EkiError::InvalidArgument(
                "level thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Bin of `phi`: bins are closed on the left, open on the right.
    pub fn bin(&self, phi: f64) -> usize {
        self.thresholds.partition_point(|&c| c <= phi)
    }

    pub fn value(&self, phi: f64) -> f64 {
        self.values[self.bin(phi)]
    }
}

/// Maps a level-set field to piecewise-constant property values.
pub fn apply_level_set(phi: &[f64], config: &LevelSetConfig) -> Vec<f64> {
    phi.iter().map(|&p| config.value(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clay() -> LevelSetConfig {
        LevelSetConfig::new(vec![-0.5, 0.5], vec![-17.0, -16.5, -16.0]).unwrap()
    }

    #[test]
    fn clay_cap_levels() {
        let out = apply_level_set(&[-0.7, 0.0, 0.6, -0.5, 0.5], &clay());
        assert_eq!(out, vec![-17.0, -16.5, -16.0, -16.5, -16.0]);
    }

    #[test]
    fn constant_field() {
        let out = apply_level_set(&[0.2; 9], &clay());
        assert!(out.iter().all(|v| *v == -16.5));
    }

    #[test]
    fn out_of_order_thresholds_rejected() {
        assert!(LevelSetConfig::new(vec![0.5, -0.5], vec![1.0, 2.0, 3.0]).is_err());
        assert!(LevelSetConfig::new(vec![0.5, 0.5], vec![1.0, 2.0, 3.0]).is_err());
        assert!(LevelSetConfig::new(vec![0.5], vec![1.0, 2.0, 3.0]).is_err());
    }
}
