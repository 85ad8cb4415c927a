//! Forward-model interface and implementations.

use std::time::Instant;

use crate::ensemble::FailureReason;

pub mod failure;
pub mod linear;
pub mod slice;
pub mod synthetic;

pub use failure::FailureInjection;
pub use linear::{linear_gaussian_forward, LinearForward};
pub use slice::{observe, solve_pressure, solve_temperature, SliceForward, SliceModelSpec, Well};
pub use synthetic::{
    draw_truth_theta, generate_synthetic_data, ObservationRecord, SyntheticData, TruthRecord,
};

/// Identifies one evaluation within a run. `seed`, `iteration` and
/// `particle` key any randomness the model needs; `deadline`, when set,
/// lets long solves give up early.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext {
    pub seed: u64,
    pub iteration: usize,
    pub particle: usize,
    pub deadline: Option<Instant>,
}

impl EvalContext {
    pub fn new(seed: u64, iteration: usize, particle: usize) -> Self {
        Self {
            seed,
            iteration,
            particle,
            deadline: None,
        }
    }

    pub fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOutcome {
    Success(Vec<f64>),
    Failure(FailureReason),
}

impl ForwardOutcome {
    /// Downgrades successes with non-finite entries to failures.
    pub fn checked(self) -> Self {
        match self {
            ForwardOutcome::Success(v) if v.iter().any(|x| !x.is_finite()) => {
                ForwardOutcome::Failure(FailureReason::NonFinite)
            }
            other => other,
        }
    }
}

/// Maps an unconstrained parameter vector to `output_dim` predictions.
///
/// Implementations must be pure functions of `(theta, ctx)` and their own
/// configuration, and safe to call from many threads at once.
pub trait ForwardModel: Send + Sync {
    fn output_dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64], ctx: &EvalContext) -> ForwardOutcome;
}

impl<T: ForwardModel + ?Sized> ForwardModel for &T {
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn evaluate(&self, theta: &[f64], ctx: &EvalContext) -> ForwardOutcome {
        (**self).evaluate(theta, ctx)
    }
}

impl<T: ForwardModel + ?Sized> ForwardModel for Box<T> {
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }

    fn evaluate(&self, theta: &[f64], ctx: &EvalContext) -> ForwardOutcome {
        (**self).evaluate(theta, ctx)
    }
}
