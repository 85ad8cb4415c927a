use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eki_core::driver::{sample_initial_ensemble, RunStatus};
use eki_core::runner::diagnose::{permeability_fields, scalar_marginals};
use eki_core::runner::persist::{read_json, write_json, write_matrix, TRUTH_FILE};
use eki_core::runner::{self, Executor, RunConfig, DATA_FILE};
use eki_core::{EkiError, Result};

/// Ensemble Kalman inversion of the geothermal vertical-slice model.
#[derive(Debug, Parser)]
#[command(name = "eki", version)]
struct Cli {
    /// Override the seed (`eki.seed` for run/sample-prior, `data.seed` for generate-data).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Concurrent forward evaluations.
    #[arg(long, global = true, env = "EKI_WORKERS")]
    workers: Option<usize>,

    /// Output directory (default: `output_dir` from the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a truth on the fine grid and write it with noisy observations.
    GenerateData { config: PathBuf },
    /// Write prior draws of the coarse-grid model for inspection.
    SamplePrior {
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Run the inversion and write the ensemble history.
    Run { config: PathBuf },
    /// Summarise a finished run into `<run-dir>/diagnostics`.
    Diagnose {
        run_dir: PathBuf,
        /// Truth record (e.g. `<run-dir>/truth.json`) for coverage flags.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn kind(e: &EkiError) -> &'static str {
    match e {
        EkiError::Config(_) => "config",
        EkiError::Io { .. } => "io",
        EkiError::Schema { .. } => "schema",
        EkiError::DegenerateEnsemble(_) => "degenerate_ensemble",
        EkiError::Solver(_) | EkiError::Timeout(_) => "solver",
        _ => "runtime",
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    let out = cli.output.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    cfg.validate()?;
    Ok((cfg, out))
}

fn executor(cfg: &RunConfig) -> Result<Executor> {
    Executor::new(cfg.workers.unwrap_or(1), cfg.timeout())
}

fn generate(cli: &Cli, path: &Path) -> Result<()> {
    let (mut cfg, out) = load_config(cli, path)?;
    if let Some(s) = cli.seed {
        cfg.data.seed = s;
    }
    let data = runner::generate_data(&cfg)?;
    std::fs::create_dir_all(&out).map_err(|e| EkiError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    write_json(&out.join(DATA_FILE), &data)?;
    write_json(&out.join(TRUTH_FILE), &data.truth)?;
    println!("{}", out.join(DATA_FILE).display());
    Ok(())
}

fn sample_prior(cli: &Cli, path: &Path, count: usize) -> Result<()> {
    let (mut cfg, out) = load_config(cli, path)?;
    if let Some(s) = cli.seed {
        cfg.eki.seed = s;
    }
    if count == 0 {
        return Err(EkiError::InvalidArgument("--count must be >= 1".into()));
    }
    let forward = cfg.coarse_forward()?;
    let prior = forward.prior();
    let theta = sample_initial_ensemble(prior.dim(), count, cfg.eki.seed);
    let dir = out.join("prior_samples");
    std::fs::create_dir_all(&dir).map_err(|e| EkiError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_matrix(&dir.join("theta.csv"), &theta)?;
    write_matrix(
        &dir.join("log_permeability.csv"),
        &permeability_fields(prior, &theta)?,
    )?;
    write_json(&dir.join("scalars.json"), &scalar_marginals(prior, &theta)?)?;
    println!("{}", dir.display());
    Ok(())
}

fn run(cli: &Cli, path: &Path) -> Result<()> {
    let (mut cfg, out) = load_config(cli, path)?;
    if let Some(s) = cli.seed {
        cfg.eki.seed = s;
    }
    let exec = executor(&cfg)?;
    let done = runner::run_slice(&cfg, &exec, &out)?;
    match &done.result.status {
        RunStatus::Converged => {
            println!("{}", out.display());
            Ok(())
        }
        RunStatus::MaxIterations => Err(EkiError::Solver(format!(
            "t = {} after {} iterations; output written to {}",
            done.result.schedule.current(),
            done.result.iterations.len(),
            out.display()
        ))),
        RunStatus::Aborted { iteration, message } => Err(EkiError::Solver(format!(
            "aborted at iteration {iteration}: {message}; output written to {}",
            out.display()
        ))),
    }
}

fn diagnose(run_dir: &Path, truth: Option<&Path>) -> Result<()> {
    let truth = truth.map(read_json).transpose()?;
    let bundle = runner::diagnose(run_dir, truth.as_ref())?;
    let s = &bundle.summary;
    println!(
        "iterations={} final_misfit_mean={} prior_mean_std={:.4} posterior_mean_std={:.4} coverage={}",
        s.iterations,
        s.final_misfit_mean.map_or("na".into(), |m| format!("{m:.3}")),
        s.prior_mean_std,
        s.posterior_mean_std,
        s.coverage_fraction.map_or("na".into(), |c| format!("{c:.3}")),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenerateData { config } => generate(&cli, config),
        Command::SamplePrior { config, count } => sample_prior(&cli, config, *count),
        Command::Run { config } => run(&cli, config),
        Command::Diagnose { run_dir, truth } => diagnose(run_dir, truth.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", kind(&e));
            ExitCode::FAILURE
        }
    }
}
