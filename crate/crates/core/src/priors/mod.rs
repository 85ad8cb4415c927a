//! Prior parametrisations: everything that turns a unit-normal vector into
//! physical model quantities.

pub mod graph;
pub mod grid;
pub mod interface;
pub mod level_set;
pub mod matern;
pub mod slice;
pub mod transform;

pub use graph::{PriorGraph, Segment, SegmentRole};
pub use grid::GridSpec;
pub use interface::{sample_interface_gp, InterfacePrior};
pub use level_set::{apply_level_set, LevelSetConfig};
pub use matern::{matern_covariance, sample_wm_field, MaternHyper, MaternSampler};
pub use slice::{
    build_slice_instance, Region, RegionPrior, SliceModelInstance, SlicePrior, SlicePriorConfig,
};
pub use transform::{transform_scalar, Param, Target, TransformSpec};
