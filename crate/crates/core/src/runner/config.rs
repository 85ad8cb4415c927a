//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::driver::EkiConfig;
use crate::error::{EkiError, Result};
use crate::forward::synthetic::DEFAULT_NOISE_FRACTION;
use crate::forward::{SliceForward, SliceModelSpec, Well};
use crate::priors::{GridSpec, Region, SlicePrior, SlicePriorConfig};

/// The annotated configuration shipped with the repository.
pub const SHIPPED_CONFIG: &str = include_str!("../../../../configs/slice.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub width: f64,
    pub height: f64,
    /// Bottom-left corner `(x, z)`.
    pub origin: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSize {
    pub nx: usize,
    pub nz: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsConfig {
    pub fine: GridSize,
    pub coarse: GridSize,
}

fn default_noise_fraction() -> f64 {
    DEFAULT_NOISE_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    #[serde(default = "default_noise_fraction")]
    pub noise_fraction: f64,
    /// Previously generated data; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

/// Physical constants and wells; the grid comes from `grids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub thickness: f64,
    pub thermal_conductivity: f64,
    pub basal_heat_flux: f64,
    pub top_temperature: f64,
    pub top_pressure: f64,
    pub density: f64,
    pub heat_capacity: f64,
    pub viscosity: f64,
    pub gravity: f64,
    pub upflow_enthalpy: f64,
    pub wells: Vec<Well>,
}

impl ModelConfig {
    pub fn spec(&self, grid: GridSpec) -> SliceModelSpec {
        SliceModelSpec {
            grid,
            thickness: self.thickness,
            thermal_conductivity: self.thermal_conductivity,
            basal_heat_flux: self.basal_heat_flux,
            top_temperature: self.top_temperature,
            top_pressure: self.top_pressure,
            density: self.density,
            heat_capacity: self.heat_capacity,
            viscosity: self.viscosity,
            gravity: self.gravity,
            upflow_enthalpy: self.upflow_enthalpy,
            wells: self.wells.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
    pub domain: DomainConfig,
    pub grids: GridsConfig,
    pub data: DataConfig,
    pub prior: SlicePriorConfig,
    pub model: ModelConfig,
    pub eki: EkiConfig,
}

/// A validation failure tied to a dotted key path.
struct Violation {
    key: String,
    message: String,
}

fn violation(key: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        key: key.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(source: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| line_of(source, s.start));
            let message = e.message().replace('\n', " ");
            EkiError::Config(match line {
                Some(l) => format!("{origin}:{l}: {message}"),
                None => format!("{origin}: {message}"),
            })
        })?;
        if let Err(v) = cfg.check() {
            let line = locate_key(source, &v.key);
            return Err(EkiError::Config(match line {
                Some(l) => format!("{origin}:{l}: {}: {}", v.key, v.message),
                None => format!("{origin}: {}: {}", v.key, v.message),
            }));
        }
        Ok(cfg)
    }

    /// Reads and validates a configuration file. A relative `data.file` is
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|e| EkiError::io(path, e))?;
        let mut cfg = Self::from_toml(&source, &path.display().to_string())?;
        if let Some(f) = &cfg.data.file {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.data.file = Some(base.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn shipped() -> Self {
        Self::from_toml(SHIPPED_CONFIG, "configs/slice.toml").expect("shipped config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|v| EkiError::Config(format!("{}: {}", v.key, v.message)))
    }

    fn check(&self) -> std::result::Result<(), Violation> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(violation(key, format!("must be positive, got {v}")))
            }
        };
        if self.workers == Some(0) {
            return Err(violation("workers", "must be >= 1"));
        }
        if let Some(t) = self.timeout_s {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(violation("timeout_s", format!("must be non-negative, got {t}")));
            }
        }
        positive("domain.width", self.domain.width)?;
        positive("domain.height", self.domain.height)?;
        if self.domain.origin.iter().any(|v| !v.is_finite()) {
            return Err(violation("domain.origin", "must be finite"));
        }
        for (name, g) in [("fine", self.grids.fine), ("coarse", self.grids.coarse)] {
            if g.nx < 2 || g.nz < 2 {
                return Err(violation(format!("grids.{name}"), "nx and nz must be >= 2"));
            }
        }
        if !(self.data.noise_fraction >= 0.0 && self.data.noise_fraction.is_finite()) {
            return Err(violation("data.noise_fraction", "must be non-negative"));
        }
        for r in Region::ALL {
            let rp = self.prior.region(r);
            let base = format!("prior.{}", section_of(r));
            for (key, range) in [("sigma", rp.sigma), ("ell_x", rp.ell_x), ("ell_z", rp.ell_z)] {
                if !(range[0] > 0.0 && range[0] < range[1] && range[1].is_finite()) {
                    return Err(violation(
                        format!("{base}.{key}"),
                        format!("range {range:?} must satisfy 0 < lo < hi"),
                    ));
                }
            }
            if let Err(e) = rp.levels.validate() {
                return Err(violation(format!("{base}.levels"), e.to_string()));
            }
        }
        if let Err(e) = self.prior.interface.validate() {
            return Err(violation("prior.interface", e.to_string()));
        }
        if !(self.prior.upflow[0] >= 0.0 && self.prior.upflow[0] < self.prior.upflow[1]) {
            return Err(violation("prior.upflow", "range must satisfy 0 <= lo < hi"));
        }
        self.prior
            .validate()
            .map_err(|e| violation("prior", e.to_string()))?;
        for (key, v) in [
            ("model.thickness", self.model.thickness),
            ("model.thermal_conductivity", self.model.thermal_conductivity),
            ("model.density", self.model.density),
            ("model.heat_capacity", self.model.heat_capacity),
            ("model.viscosity", self.model.viscosity),
        ] {
            positive(key, v)?;
        }
        for grid in [self.fine_grid(), self.coarse_grid()] {
            let grid = grid.map_err(|e| violation("grids", e.to_string()))?;
            self.model
                .spec(grid)
                .validate()
                .map_err(|e| violation("model.wells", e.to_string()))?;
        }
        if self.eki.ensemble_size < 2 {
            return Err(violation("eki.ensemble_size", "must be >= 2"));
        }
        if !(self.eki.delta > 0.0 && self.eki.delta.is_finite()) {
            return Err(violation("eki.delta", "must be positive"));
        }
        if self.eki.max_iterations < 1 {
            return Err(violation("eki.max_iterations", "must be >= 1"));
        }
        if let Some(l) = &self.eki.localisation {
            l.validate()
                .map_err(|e| violation("eki.localisation", e.to_string()))?;
        }
        if let Some(i) = &self.eki.inflation {
            i.validate()
                .map_err(|e| violation("eki.inflation", e.to_string()))?;
        }
        Ok(())
    }

    fn grid(&self, size: GridSize) -> Result<GridSpec> {
        GridSpec::covering(
            size.nx,
            size.nz,
            self.domain.width,
            self.domain.height,
            (self.domain.origin[0], self.domain.origin[1]),
        )
    }

    pub fn fine_grid(&self) -> Result<GridSpec> {
        self.grid(self.grids.fine)
    }

    pub fn coarse_grid(&self) -> Result<GridSpec> {
        self.grid(self.grids.coarse)
    }

    fn forward(&self, grid: GridSpec) -> Result<SliceForward> {
        let prior = SlicePrior::new(self.prior.clone(), grid)?;
        SliceForward::new(prior, self.model.spec(grid))
    }

    /// Model on the fine grid, used only to generate synthetic truth.
    pub fn fine_forward(&self) -> Result<SliceForward> {
        self.forward(self.fine_grid()?)
    }

    /// Inversion model on the coarse grid.
    pub fn coarse_forward(&self) -> Result<SliceForward> {
        self.forward(self.coarse_grid()?)
    }

    pub fn timeout(&self) -> Option<Duration> {
        self.timeout_s.map(Duration::from_secs_f64)
    }
}

fn section_of(r: Region) -> &'static str {
    match r {
        Region::Shallow => "shallow",
        Region::Clay => "clay",
        Region::Deep => "deep",
    }
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line (1-based) on which a dotted key is set, or failing that the
/// header of its closest enclosing table.
fn locate_key(source: &str, key: &str) -> Option<usize> {
    let mut table = String::new();
    let mut best: Option<(usize, usize)> = None;
    let join = |t: &str, k: &str| {
        if t.is_empty() {
            k.to_string()
        } else {
            format!("{t}.{k}")
        }
    };
    for (n, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let candidate = if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            table.clone()
        } else if let Some((k, _)) = line.split_once('=') {
            let k: String = k.trim().split('.').map(str::trim).collect::<Vec<_>>().join(".");
            join(&table, &k)
        } else {
            continue;
        };
        let matches = key == candidate || key.starts_with(&format!("{candidate}."));
        if matches {
            let depth = candidate.split('.').count();
            if best.is_none_or(|(d, _)| depth > d) {
                best = Some((depth, n + 1));
            }
        }
    }
    best.map(|(_, l)| l)
}
