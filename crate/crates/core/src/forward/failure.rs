use rand::Rng;

use crate::ensemble::FailureReason;
use crate::error::{EkiError, Result};
use crate::forward::{EvalContext, ForwardModel, ForwardOutcome};
use crate::rng::{self, StreamPurpose};

/// Wraps a model so that each evaluation fails with probability `rate`,
/// decided by the particle's own stream.
#[derive(Debug, Clone)]
pub struct FailureInjection<M> {
    inner: M,
    rate: f64,
}

impl<M: ForwardModel> FailureInjection<M> {
    pub fn new(inner: M, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EkiError::InvalidArgument(format!(
                "failure rate {rate} outside [0, 1)"
            )));
        }
        Ok(Self { inner, rate })
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ForwardModel> ForwardModel for FailureInjection<M> {
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, theta: &[f64], ctx: &EvalContext) -> ForwardOutcome {
        if self.rate > 0.0 {
            let mut rng = rng::stream(
                ctx.seed,
                ctx.iteration,
                StreamPurpose::FailureInjection,
                ctx.particle,
            );
            if rng.random::<f64>() < self.rate {
                return ForwardOutcome::Failure(FailureReason::Injected);
            }
        }
        self.inner.evaluate(theta, ctx)
    }
}
