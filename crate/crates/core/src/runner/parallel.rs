use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::ensemble::{FailureReason, ParticleStatus, PredictionEnsemble};
use crate::error::{EkiError, Result};
use crate::forward::{EvalContext, ForwardModel, ForwardOutcome};

/// How forward evaluations are scheduled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Executor {
    pub workers: usize,
    /// Wall-clock limit per particle evaluation.
    pub timeout: Option<Duration>,
}

impl Default for Executor {
    fn default() -> Self {
        Self {
            workers: 1,
            timeout: None,
        }
    }
}

impl Executor {
    pub fn new(workers: usize, timeout: Option<Duration>) -> Result<Self> {
        if workers == 0 {
            return Err(EkiError::InvalidArgument("workers must be >= 1".into()));
        }
        Ok(Self { workers, timeout })
    }
}

fn evaluate_one<F: ForwardModel + ?Sized>(
    forward: &F,
    theta: &[f64],
    seed: u64,
    iteration: usize,
    particle: usize,
    timeout: Option<Duration>,
) -> ForwardOutcome {
    let start = Instant::now();
    let mut ctx = EvalContext::new(seed, iteration, particle);
    ctx.deadline = timeout.map(|t| start + t);
    let out = forward.evaluate(theta, &ctx).checked();
    match timeout {
        Some(t) if start.elapsed() >= t => ForwardOutcome::Failure(FailureReason::Timeout),
        _ => out,
    }
}

/// Evaluates every column of `params` with at most `exec.workers` concurrent
/// evaluations. The result does not depend on the worker count.
pub fn parallel_evaluate<F: ForwardModel + ?Sized>(
    params: &DMatrix<f64>,
    forward: &F,
    exec: &Executor,
    seed: u64,
    iteration: usize,
) -> Result<PredictionEnsemble> {
    if exec.workers == 0 {
        return Err(EkiError::InvalidArgument("workers must be >= 1".into()));
    }
    let j = params.ncols();
    let columns: Vec<Vec<f64>> = params
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    let run = || -> Vec<ForwardOutcome> {
        columns
            .par_iter()
            .enumerate()
            .map(|(p, theta)| evaluate_one(forward, theta, seed, iteration, p, exec.timeout))
            .collect()
    };
    let outcomes = if exec.workers == 1 {
        columns
            .iter()
            .enumerate()
            .map(|(p, theta)| evaluate_one(forward, theta, seed, iteration, p, exec.timeout))
            .collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(exec.workers)
            .build()
            .map_err(|e| EkiError::Config(format!("cannot start worker pool: {e}")))?
            .install(run)
    };

    let q = forward.output_dim();
    let mut values = DMatrix::from_element(q, j, f64::NAN);
    let mut status = Vec::with_capacity(j);
    for (p, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            ForwardOutcome::Success(v) if v.len() == q => {
                values.column_mut(p).copy_from_slice(&v);
                status.push(ParticleStatus::Success);
            }
            ForwardOutcome::Success(_) => {
                status.push(ParticleStatus::Failed(FailureReason::NonFinite));
            }
            ForwardOutcome::Failure(r) => status.push(ParticleStatus::Failed(r)),
        }
    }
    PredictionEnsemble::new(values, status)
}
