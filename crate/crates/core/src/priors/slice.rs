//! Prior for the vertical-slice reservoir: three level-set permeability
//! regions separated by a fixed shallow interface and a Gaussian-process
//! deep interface, plus a scalar basal upflow rate.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::priors::graph::{PriorGraph, SegmentRole};
use crate::priors::grid::GridSpec;
use crate::priors::interface::InterfacePrior;
use crate::priors::level_set::{apply_level_set, LevelSetConfig};
use crate::priors::matern::{sample_wm_field, MaternHyper};
use crate::priors::transform::TransformSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "S")]
    Shallow,
    #[serde(rename = "C")]
    Clay,
    #[serde(rename = "D")]
    Deep,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Shallow, Region::Clay, Region::Deep];

    pub fn name(self) -> &'static str {
        match self {
            Region::Shallow => "shallow",
            Region::Clay => "clay",
            Region::Deep => "deep",
        }
    }

    pub fn label(self) -> char {
        match self {
            Region::Shallow => 'S',
            Region::Clay => 'C',
            Region::Deep => 'D',
        }
    }
}

/// Uniform hyperprior ranges and level-set map of one region's field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionPrior {
    pub sigma: [f64; 2],
    pub ell_x: [f64; 2],
    pub ell_z: [f64; 2],
    pub levels: LevelSetConfig,
}

impl RegionPrior {
    fn validate(&self, name: &str) -> Result<()> {
        for (key, r) in [
            ("sigma", self.sigma),
            ("ell_x", self.ell_x),
            ("ell_z", self.ell_z),
        ] {
            if !(r[0] > 0.0 && r[0] < r[1] && r[1].is_finite()) {
                return Err(EkiError::InvalidArgument(format!(
                    "{name}.{key}: range {r:?} must satisfy 0 < lo < hi"
                )));
            }
        }
        self.levels
            .validate()
            .map_err(|e| EkiError::InvalidArgument(format!("{name}.levels: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicePriorConfig {
    pub shallow: RegionPrior,
    pub clay: RegionPrior,
    pub deep: RegionPrior,
    pub interface: InterfacePrior,
    /// Elevation of the shallow/clay interface (m).
    pub shallow_interface: f64,
    /// Uniform prior bounds on the basal upflow (kg/s).
    pub upflow: [f64; 2],
}

impl Default for SlicePriorConfig {
    fn default() -> Self {
        let high_perm = LevelSetConfig {
            thresholds: vec![-0.5, 0.5],
            values: vec![-15.0, -14.0, -13.0],
        };
        Self {
            shallow: RegionPrior {
                sigma: [0.5, 1.0],
                ell_x: [1000.0, 2000.0],
                ell_z: [200.0, 500.0],
                levels: high_perm.clone(),
            },
            clay: RegionPrior {
                sigma: [0.5, 1.0],
                ell_x: [1000.0, 2000.0],
                ell_z: [200.0, 500.0],
                levels: LevelSetConfig {
                    thresholds: vec![-0.5, 0.5],
                    values: vec![-17.0, -16.5, -16.0],
                },
            },
            deep: RegionPrior {
                sigma: [0.75, 1.25],
                ell_x: [1000.0, 2000.0],
                ell_z: [200.0, 500.0],
                levels: high_perm,
            },
            interface: InterfacePrior::default(),
            shallow_interface: -60.0,
            upflow: [0.1, 0.2],
        }
    }
}

impl SlicePriorConfig {
    pub fn region(&self, r: Region) -> &RegionPrior {
        match r {
            Region::Shallow => &self.shallow,
            Region::Clay => &self.clay,
            Region::Deep => &self.deep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in Region::ALL {
            self.region(r).validate(r.name())?;
        }
        self.interface.validate()?;
        if !(self.upflow[0] >= 0.0 && self.upflow[0] < self.upflow[1]) {
            return Err(EkiError::InvalidArgument(format!(
                "upflow range {:?} must satisfy 0 <= lo < hi",
                self.upflow
            )));
        }
        if !self.shallow_interface.is_finite() {
            return Err(EkiError::InvalidArgument(
                "shallow_interface must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Physical model quantities for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceModelInstance {
    pub grid: GridSpec,
    /// log10 permeability (m^2) per cell.
    pub log_permeability: Vec<f64>,
    /// Basal mass upflow (kg/s).
    pub upflow_rate: f64,
    /// Clay/deep interface elevation per column (m).
    pub interface_depth: Vec<f64>,
    pub shallow_interface: f64,
    pub regions: Vec<Region>,
}

/// Slice prior bound to a grid: owns the parameter layout and the cached
/// interface covariance factor.
#[derive(Debug, Clone)]
pub struct SlicePrior {
    config: SlicePriorConfig,
    grid: GridSpec,
    graph: PriorGraph,
    interface_factor: DMatrix<f64>,
}

impl SlicePrior {
    /// Layout: `[3 x (sigma, ell_x, ell_z) | field noise S | C | D | interface noise | upflow]`.
    pub fn new(config: SlicePriorConfig, grid: GridSpec) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        let mut graph = PriorGraph::new();
        for r in Region::ALL {
            let rp = config.region(r);
            for (key, range) in [("sigma", rp.sigma), ("ell_x", rp.ell_x), ("ell_z", rp.ell_z)] {
                graph.push_scalar(
                    &format!("{}.{key}", r.name()),
                    SegmentRole::Hyper {
                        transform: TransformSpec::uniform(range[0], range[1]),
                    },
                )?;
            }
        }
        for r in Region::ALL {
            graph.push_block(
                &format!("{}.noise", r.name()),
                SegmentRole::FieldNoise {
                    nx: grid.nx,
                    nz: grid.nz,
                },
                grid.cells(),
            )?;
        }
        graph.push_block("interface.noise", SegmentRole::InterfaceNoise, grid.nx)?;
        graph.push_scalar(
            "upflow",
            SegmentRole::Scalar {
                transform: TransformSpec::uniform(config.upflow[0], config.upflow[1]),
            },
        )?;
        let interface_factor = config.interface.factor(&grid.x_centres())?;
        Ok(Self {
            config,
            grid,
            graph,
            interface_factor,
        })
    }

    pub fn graph(&self) -> &PriorGraph {
        &self.graph
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn config(&self) -> &SlicePriorConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.graph.dim()
    }

    /// Transformed hyperparameters and upflow, keyed by segment name.
    pub fn scalars(&self, theta: &[f64]) -> Result<BTreeMap<String, f64>> {
        self.graph.transformed_scalars(theta)
    }

    /// Level-set field (before thresholding) of one region.
    pub fn level_set_field(&self, theta: &[f64], region: Region) -> Result<Vec<f64>> {
        let s = self.scalars(theta)?;
        self.field_from_scalars(theta, region, &s)
    }

    fn field_from_scalars(
        &self,
        theta: &[f64],
        region: Region,
        s: &BTreeMap<String, f64>,
    ) -> Result<Vec<f64>> {
        let n = region.name();
        let hyper = MaternHyper::new_2d(
            s[&format!("{n}.sigma")],
            s[&format!("{n}.ell_x")],
            s[&format!("{n}.ell_z")],
        )?;
        let noise = self.graph.slice(theta, &format!("{n}.noise"))?;
        sample_wm_field(noise, &hyper, &self.grid)
    }

    pub fn build_instance(&self, theta: &[f64]) -> Result<SliceModelInstance> {
        build_slice_instance(theta, self)
    }
}

/// Maps an unconstrained vector to the physical slice model.
pub fn build_slice_instance(theta: &[f64], prior: &SlicePrior) -> Result<SliceModelInstance> {
    if theta.len() != prior.dim() {
        return Err(EkiError::Dimension(format!(
            "parameter vector has {} entries, prior layout {}",
            theta.len(),
            prior.dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(EkiError::NonFinite("parameter vector".into()));
    }
    let scalars = prior.scalars(theta)?;
    let grid = prior.grid;
    let mut region_perm = Vec::with_capacity(3);
    for r in Region::ALL {
        let field = prior.field_from_scalars(theta, r, &scalars)?;
        region_perm.push(apply_level_set(&field, &prior.config.region(r).levels));
    }
    let interface_depth = prior.config.interface.sample_with_factor(
        &prior.interface_factor,
        prior.graph.slice(theta, "interface.noise")?,
    )?;
    let shallow = prior.config.shallow_interface;
    let mut regions = Vec::with_capacity(grid.cells());
    let mut log_permeability = Vec::with_capacity(grid.cells());
    for cell in 0..grid.cells() {
        let (i, k) = grid.coords(cell);
        let z = grid.z_centre(k);
        let region = if z > shallow {
            Region::Shallow
        } else if z > interface_depth[i] {
            Region::Clay
        } else {
            Region::Deep
        };
        let idx = match region {
            Region::Shallow => 0,
            Region::Clay => 1,
            Region::Deep => 2,
        };
        regions.push(region);
        log_permeability.push(region_perm[idx][cell]);
    }
    Ok(SliceModelInstance {
        grid,
        log_permeability,
        upflow_rate: scalars["upflow"],
        interface_depth,
        shallow_interface: shallow,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, StreamPurpose};

    fn coarse() -> SlicePrior {
        let grid = GridSpec::covering(25, 25, 1500.0, 1500.0, (0.0, -1500.0)).unwrap();
        SlicePrior::new(SlicePriorConfig::default(), grid).unwrap()
    }

    #[test]
    fn layout_dimension() {
        let p = coarse();
        assert_eq!(p.dim(), 9 + 3 * 625 + 25 + 1);
        assert_eq!(p.graph().segment("shallow.noise").unwrap().offset, 9);
        assert_eq!(p.graph().segment("upflow").unwrap().offset, 1909);
    }

    #[test]
    fn instance_invariants() {
        let p = coarse();
        for draw in 0..5 {
            let theta: Vec<f64> =
                rng::standard_normal_vector(&mut rng::stream(11, 0, StreamPurpose::Prior, draw), p.dim())
                    .iter()
                    .copied()
                    .collect();
            let inst = p.build_instance(&theta).unwrap();
            assert!((0.1..=0.2).contains(&inst.upflow_rate));
            for cell in 0..inst.grid.cells() {
                let (_, z) = inst.grid.centre(cell);
                if z > -60.0 {
                    assert_eq!(inst.regions[cell], Region::Shallow);
                }
                let allowed = &p.config().region(inst.regions[cell]).levels.values;
                assert!(allowed.contains(&inst.log_permeability[cell]));
            }
            assert_eq!(inst, p.build_instance(&theta).unwrap());
        }
    }

    #[test]
    fn zero_vector_gives_mean_interface() {
        let p = coarse();
        let inst = p.build_instance(&vec![0.0; p.dim()]).unwrap();
        assert!(inst.interface_depth.iter().all(|d| *d == -350.0));
        assert!((inst.upflow_rate - 0.15).abs() < 1e-15);
        // zero white noise: every field is 0, the middle level
        assert!(inst
            .regions
            .iter()
            .zip(&inst.log_permeability)
            .all(|(r, k)| *k == p.config().region(*r).levels.values[1]));
    }

    #[test]
    fn bad_config_rejected() {
        let mut c = SlicePriorConfig::default();
        c.clay.levels.thresholds = vec![0.5, -0.5];
        let grid = GridSpec::covering(5, 5, 1.0, 1.0, (0.0, 0.0)).unwrap();
        assert!(SlicePrior::new(c, grid).is_err());
        let c = SlicePriorConfig {
            upflow: [0.2, 0.1],
            ..Default::default()
        };
        assert!(SlicePrior::new(c, grid).is_err());
    }
}
