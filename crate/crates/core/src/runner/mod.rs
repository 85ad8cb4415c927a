//! Batch front-end: configuration, parallel evaluation, persistence and
//! diagnostics of slice inversions.

pub mod config;
pub mod diagnose;
pub mod parallel;
pub mod persist;

use std::path::Path;

use crate::driver::{run_eki, RunResult};
use crate::ensemble::ObservationModel;
use crate::error::{EkiError, Result};
use crate::forward::{draw_truth_theta, generate_synthetic_data, SyntheticData};

pub use config::RunConfig;
pub use diagnose::{diagnose, diagnose_run, percentile, DiagnosticsBundle};
pub use parallel::{parallel_evaluate, Executor};
pub use persist::{load_run, persist_iteration, persist_run, LoadedRun, RunManifest};

pub const DATA_FILE: &str = "data.json";

/// Draws a truth on the fine grid and simulates noisy observations.
pub fn generate_data(config: &RunConfig) -> Result<SyntheticData> {
    let fine = config.fine_forward()?;
    let coarse = config.coarse_forward()?;
    let theta = draw_truth_theta(fine.prior(), config.data.seed);
    generate_synthetic_data(
        &theta,
        &fine,
        &coarse,
        config.data.noise_fraction,
        config.data.seed,
    )
}

/// Synthetic data from `data.file` if set, otherwise freshly generated.
pub fn obtain_data(config: &RunConfig) -> Result<SyntheticData> {
    match &config.data.file {
        Some(path) => persist::read_json(path),
        None => generate_data(config),
    }
}

/// The configuration as recorded in the manifest. Output directory and
/// worker count are left out: neither affects the results.
pub fn config_echo(config: &RunConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(config)
        .map_err(|e| EkiError::Config(format!("cannot serialise configuration: {e}")))?;
    if let Some(map) = v.as_object_mut() {
        map.remove("output_dir");
        map.remove("workers");
    }
    Ok(v)
}

/// Outcome of [`run_slice`]: everything that was written.
#[derive(Debug, Clone)]
pub struct SliceRun {
    pub data: SyntheticData,
    pub observations: ObservationModel,
    pub result: RunResult,
    pub manifest: RunManifest,
}

/// Runs the full slice inversion and writes the output tree to `out`.
pub fn run_slice(config: &RunConfig, exec: &Executor, out: &Path) -> Result<SliceRun> {
    config.validate()?;
    let data = obtain_data(config)?;
    let observations = data.observations.to_model()?;
    let forward = config.coarse_forward()?;
    let result = run_eki(
        forward.prior().graph(),
        &forward,
        &observations,
        &config.eki,
        exec,
    )?;
    let echo = config_echo(config)?;
    let manifest = RunManifest::new(&result, config.eki.seed, echo, observations.dim());
    persist_run(out, &result, &manifest, &observations)?;
    persist::write_json(&out.join(persist::TRUTH_FILE), &data.truth)?;
    Ok(SliceRun {
        data,
        observations,
        result,
        manifest,
    })
}
