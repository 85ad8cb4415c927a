//! Summaries of a finished slice run: cellwise moments, coverage of the
//! truth, hyperparameter and upflow marginals, and the misfit trace.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::forward::TruthRecord;
use crate::priors::{GridSpec, SegmentRole, SlicePrior};
use crate::runner::config::RunConfig;
use crate::runner::persist::{load_run, write_json, LoadedRun};

pub const DIAGNOSTICS_DIR: &str = "diagnostics";

/// Empirical quantile by linear interpolation between order statistics
/// (position `(N - 1) p` in the sorted sample).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty() && (0.0..=1.0).contains(&p));
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-cell statistics of one ensemble of log-permeability fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CellStats {
    /// `fields` is cells x particles.
    pub fn of(fields: &DMatrix<f64>) -> Self {
        let mut s = CellStats {
            mean: Vec::new(),
            std: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for row in fields.row_iter() {
            let v: Vec<f64> = row.iter().copied().collect();
            let (m, sd) = mean_std(&v);
            s.mean.push(m);
            s.std.push(sd);
            s.lower.push(percentile(&v, 0.025));
            s.upper.push(percentile(&v, 0.975));
        }
        s
    }

    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len() as f64
    }

    /// Truth inside the central 95% interval, per cell.
    pub fn coverage(&self, truth: &[f64]) -> Vec<bool> {
        truth
            .iter()
            .enumerate()
            .map(|(c, t)| self.lower[c] <= *t && *t <= self.upper[c])
            .collect()
    }
}

/// Maps a truth field to `grid` by taking, for every cell, the truth cell
/// whose centre is nearest.
pub fn project_nearest(truth: &[f64], truth_grid: &GridSpec, grid: &GridSpec) -> Vec<f64> {
    (0..grid.cells())
        .map(|c| {
            let (x, z) = grid.centre(c);
            truth[truth_grid.nearest_cell(x, z)]
        })
        .collect()
}

/// Transformed scalar parameters of every particle, keyed by segment name.
pub fn scalar_marginals(prior: &SlicePrior, params: &DMatrix<f64>) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for col in params.column_iter() {
        let theta: Vec<f64> = col.iter().copied().collect();
        for (k, v) in prior.scalars(&theta)? {
            out.entry(k).or_default().push(v);
        }
    }
    Ok(out)
}

/// Log-permeability fields (cells x particles) of an ensemble.
pub fn permeability_fields(prior: &SlicePrior, params: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(prior.grid().cells(), params.ncols());
    for (j, col) in params.column_iter().enumerate() {
        let theta: Vec<f64> = col.iter().copied().collect();
        let inst = prior.build_instance(&theta)?;
        out.column_mut(j).copy_from_slice(&inst.log_permeability);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisfitTraceRow {
    pub iteration: usize,
    pub t: f64,
    pub alpha: Option<f64>,
    pub failures: Option<usize>,
    pub misfit_min: f64,
    pub misfit_mean: f64,
    pub misfit_max: f64,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_misfit_mean: Option<f64>,
    pub observation_dim: usize,
    pub prior_mean_std: f64,
    pub posterior_mean_std: f64,
    pub coverage_fraction: Option<f64>,
    pub truth_upflow: Option<f64>,
    pub upflow_range: [f64; 2],
    pub truth_upflow_in_range: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsBundle {
    pub grid: GridSpec,
    pub prior: CellStats,
    pub posterior: CellStats,
    /// Truth projected to the inversion grid, when supplied.
    pub truth: Option<Vec<f64>>,
    pub coverage: Option<Vec<bool>>,
    pub prior_marginals: BTreeMap<String, Vec<f64>>,
    pub posterior_marginals: BTreeMap<String, Vec<f64>>,
    pub hyper_names: Vec<String>,
    pub misfit_trace: Vec<MisfitTraceRow>,
    pub summary: DiagnosticsSummary,
}

/// Computes diagnostics from a loaded run and its configuration.
pub fn diagnose_run(
    run: &LoadedRun,
    config: &RunConfig,
    truth: Option<&TruthRecord>,
) -> Result<DiagnosticsBundle> {
    let grid = config.coarse_grid()?;
    let prior = SlicePrior::new(config.prior.clone(), grid)?;
    let snaps = &run.result.snapshots;
    if snaps.len() < 2 {
        return Err(EkiError::Schema {
            path: "manifest".into(),
            message: "run has no completed iterations".into(),
        });
    }
    if snaps[0].params.dim() != prior.dim() {
        return Err(EkiError::Dimension(format!(
            "run parameters have {} rows, prior layout {}",
            snaps[0].params.dim(),
            prior.dim()
        )));
    }
    let initial = &snaps[0].params.values;
    let last = &snaps[snaps.len() - 1].params.values;
    let prior_stats = CellStats::of(&permeability_fields(&prior, initial)?);
    let post_fields = permeability_fields(&prior, last)?;
    let posterior = CellStats::of(&post_fields);
    let prior_marginals = scalar_marginals(&prior, initial)?;
    let posterior_marginals = scalar_marginals(&prior, last)?;
    let hyper_names = prior
        .graph()
        .segments()
        .iter()
        .filter(|s| matches!(s.role, SegmentRole::Hyper { .. } | SegmentRole::Scalar { .. }))
        .map(|s| s.name.clone())
        .collect();

    let mut misfit_trace: Vec<MisfitTraceRow> = run
        .result
        .iterations
        .iter()
        .map(|r| MisfitTraceRow {
            iteration: r.iteration,
            t: r.t,
            alpha: Some(r.alpha),
            failures: Some(r.failures),
            misfit_min: r.misfit.min,
            misfit_mean: r.misfit.mean,
            misfit_max: r.misfit.max,
            rho: r.rho,
        })
        .collect();
    if let Some(m) = run.result.final_misfit {
        misfit_trace.push(MisfitTraceRow {
            iteration: run.result.iterations.len(),
            t: run.result.schedule.current(),
            alpha: None,
            failures: None,
            misfit_min: m.min,
            misfit_mean: m.mean,
            misfit_max: m.max,
            rho: None,
        });
    }

    let projected = truth.map(|t| project_nearest(&t.log_permeability, &t.grid, &grid));
    let coverage = projected.as_ref().map(|t| posterior.coverage(t));
    let upflow = &posterior_marginals["upflow"];
    let upflow_range = [
        upflow.iter().copied().fold(f64::INFINITY, f64::min),
        upflow.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ];
    let truth_upflow = truth.map(|t| t.upflow_rate);
    let summary = DiagnosticsSummary {
        iterations: run.result.iterations.len(),
        converged: run.result.converged(),
        final_misfit_mean: run.result.final_misfit.map(|m| m.mean),
        observation_dim: run.observations.dim(),
        prior_mean_std: prior_stats.mean_std(),
        posterior_mean_std: posterior.mean_std(),
        coverage_fraction: coverage
            .as_ref()
            .map(|c| c.iter().filter(|b| **b).count() as f64 / c.len() as f64),
        truth_upflow,
        upflow_range,
        truth_upflow_in_range: truth_upflow.map(|u| upflow_range[0] <= u && u <= upflow_range[1]),
    };
    Ok(DiagnosticsBundle {
        grid,
        prior: prior_stats,
        posterior,
        truth: projected,
        coverage,
        prior_marginals,
        posterior_marginals,
        hyper_names,
        misfit_trace,
        summary,
    })
}

fn opt<T: std::fmt::Debug>(v: Option<T>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> EkiError + '_ {
    move |e| EkiError::io(path, e.into())
}

impl DiagnosticsBundle {
    /// Writes `cells.csv`, `marginals_prior.csv`, `marginals_posterior.csv`,
    /// `misfit_trace.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| EkiError::io(dir, e))?;

        let path = dir.join("cells.csv");
        let err = csv_err(&path);
        let mut w = csv::Writer::from_path(&path).map_err(&err)?;
        w.write_record([
            "cell",
            "i",
            "k",
            "x",
            "z",
            "prior_mean",
            "prior_std",
            "mean",
            "std",
            "p2_5",
            "p97_5",
            "truth",
            "covered",
        ])
        .map_err(&err)?;
        for c in 0..self.grid.cells() {
            let (i, k) = self.grid.coords(c);
            let (x, z) = self.grid.centre(c);
            let rec = [
                c.to_string(),
                i.to_string(),
                k.to_string(),
                format!("{x:?}"),
                format!("{z:?}"),
                format!("{:?}", self.prior.mean[c]),
                format!("{:?}", self.prior.std[c]),
                format!("{:?}", self.posterior.mean[c]),
                format!("{:?}", self.posterior.std[c]),
                format!("{:?}", self.posterior.lower[c]),
                format!("{:?}", self.posterior.upper[c]),
                opt(self.truth.as_ref().map(|t| t[c])),
                opt(self.coverage.as_ref().map(|f| f[c])),
            ];
            w.write_record(&rec).map_err(&err)?;
        }
        w.flush().map_err(|e| EkiError::io(&path, e))?;

        for (name, marg) in [
            ("marginals_prior.csv", &self.prior_marginals),
            ("marginals_posterior.csv", &self.posterior_marginals),
        ] {
            let path = dir.join(name);
            let err = csv_err(&path);
            let mut w = csv::Writer::from_path(&path).map_err(&err)?;
            let mut header = vec!["particle".to_string()];
            header.extend(self.hyper_names.iter().cloned());
            w.write_record(&header).map_err(&err)?;
            let j = marg.values().next().map_or(0, Vec::len);
            for p in 0..j {
                let mut rec = vec![p.to_string()];
                rec.extend(self.hyper_names.iter().map(|n| format!("{:?}", marg[n][p])));
                w.write_record(&rec).map_err(&err)?;
            }
            w.flush().map_err(|e| EkiError::io(&path, e))?;
        }

        let path = dir.join("misfit_trace.csv");
        let err = csv_err(&path);
        let mut w = csv::Writer::from_path(&path).map_err(&err)?;
        w.write_record([
            "iteration",
            "t",
            "alpha",
            "failures",
            "misfit_min",
            "misfit_mean",
            "misfit_max",
            "rho",
        ])
        .map_err(&err)?;
        for r in &self.misfit_trace {
            w.write_record([
                r.iteration.to_string(),
                format!("{:?}", r.t),
                opt(r.alpha),
                opt(r.failures),
                format!("{:?}", r.misfit_min),
                format!("{:?}", r.misfit_mean),
                format!("{:?}", r.misfit_max),
                opt(r.rho),
            ])
            .map_err(&err)?;
        }
        w.flush().map_err(|e| EkiError::io(&path, e))?;

        write_json(&dir.join("summary.json"), &self.summary)
    }
}

/// Loads a run directory, computes its diagnostics and writes them to
/// `<run>/diagnostics`.
pub fn diagnose(run_dir: &Path, truth: Option<&TruthRecord>) -> Result<DiagnosticsBundle> {
    let run = load_run(run_dir)?;
    let mut echo = run.manifest.config.clone();
    if let Some(map) = echo.as_object_mut() {
        map.insert("output_dir".into(), run_dir.display().to_string().into());
    }
    let config: RunConfig = serde_json::from_value(echo)
        .map_err(|e| EkiError::schema(run_dir.join("manifest.json"), format!("config echo: {e}")))?;
    let bundle = diagnose_run(&run, &config, truth)?;
    bundle.write(&run_dir.join(DIAGNOSTICS_DIR))?;
    Ok(bundle)
}
