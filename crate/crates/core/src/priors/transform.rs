//! Inverse-CDF maps from a unit-normal parameter to constrained targets.

use serde::{Deserialize, Serialize};

use crate::error::{EkiError, Result};
use crate::special::{normal_cdf, normal_quantile, normal_sf};

const U_CLAMP: f64 = 1e-15;
/// Standardised bound beyond which the exponential tail limit is used.
const TAIL_SWITCH: f64 = 35.0;

/// A transform argument: either a constant or the transformed value of an
/// earlier scalar segment of the prior layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Ref { of: String },
}

impl Param {
    pub fn reference(&self) -> Option<&str> {
        match self {
            Param::Ref { of } => Some(of),
            Param::Fixed(_) => None,
        }
    }

    fn resolve(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        match self {
            Param::Fixed(v) => Ok(*v),
            Param::Ref { of } => lookup(of)
                .ok_or_else(|| EkiError::InvalidArgument(format!("unresolved transform reference '{of}'"))),
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Fixed(v)
    }
}

/// Target distribution of a scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    Uniform {
        a: Param,
        b: Param,
    },
    TruncatedNormal {
        mean: Param,
        std: Param,
        lo: Param,
        hi: Param,
    },
    Normal {
        mean: Param,
        std: Param,
    },
}

/// A transform with every argument evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Uniform { a: f64, b: f64 },
    TruncatedNormal { mean: f64, std: f64, lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

impl TransformSpec {
    pub fn uniform(a: f64, b: f64) -> Self {
        TransformSpec::Uniform {
            a: a.into(),
            b: b.into(),
        }
    }

    pub fn references(&self) -> Vec<&str> {
        let params: Vec<&Param> = match self {
            TransformSpec::Uniform { a, b } => vec![a, b],
            TransformSpec::TruncatedNormal { mean, std, lo, hi } => vec![mean, std, lo, hi],
            TransformSpec::Normal { mean, std } => vec![mean, std],
        };
        params.into_iter().filter_map(Param::reference).collect()
    }

    pub fn resolve(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<Target> {
        let t = match self {
            TransformSpec::Uniform { a, b } => Target::Uniform {
                a: a.resolve(lookup)?,
                b: b.resolve(lookup)?,
            },
            TransformSpec::TruncatedNormal { mean, std, lo, hi } => Target::TruncatedNormal {
                mean: mean.resolve(lookup)?,
                std: std.resolve(lookup)?,
                lo: lo.resolve(lookup)?,
                hi: hi.resolve(lookup)?,
            },
            TransformSpec::Normal { mean, std } => Target::Normal {
                mean: mean.resolve(lookup)?,
                std: std.resolve(lookup)?,
            },
        };
        t.validate()?;
        Ok(t)
    }

    /// Resolves a transform that has no references.
    pub fn fixed(&self) -> Result<Target> {
        self.resolve(&|_| None)
    }
}

impl Target {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Target::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
            Target::TruncatedNormal { mean, std, lo, hi } => {
                mean.is_finite() && std > 0.0 && std.is_finite() && lo < hi && !lo.is_nan() && !hi.is_nan()
            }
            Target::Normal { mean, std } => mean.is_finite() && std > 0.0 && std.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(EkiError::InvalidArgument(format!(
                "invalid transform target {self:?}"
            )))
        }
    }

    /// Target cumulative distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Target::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Target::Normal { mean, std } => normal_cdf((x - mean) / std),
            Target::TruncatedNormal { mean, std, lo, hi } => {
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                let (a, b, z) = ((lo - mean) / std, (hi - mean) / std, (x - mean) / std);
                if a >= TAIL_SWITCH {
                    tail_cdf(a, b, z)
                } else if b <= -TAIL_SWITCH {
                    1.0 - tail_cdf(-b, -a, -z)
                } else if a >= 0.0 {
                    (normal_sf(a) - normal_sf(z)) / (normal_sf(a) - normal_sf(b))
                } else {
                    (normal_cdf(z) - normal_cdf(a)) / (normal_cdf(b) - normal_cdf(a))
                }
            }
        }
    }
}

/// Maps a unit-normal `theta` to the target through `F_t^{-1}(F_n(theta))`.
pub fn transform_scalar(theta: f64, target: &Target) -> Result<f64> {
    if !theta.is_finite() {
        return Err(EkiError::NonFinite(format!("transform input {theta}")));
    }
    match *target {
        Target::Normal { mean, std } => Ok(mean + std * theta),
        Target::Uniform { a, b } => {
            let u = normal_cdf(theta).clamp(U_CLAMP, 1.0 - U_CLAMP);
            Ok(a + (b - a) * u)
        }
        Target::TruncatedNormal { mean, std, lo, hi } => {
            if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                return Ok(mean + std * theta);
            }
            let (a, b) = ((lo - mean) / std, (hi - mean) / std);
            let z = if a >= 0.0 {
                upper_tail_quantile(a, b, normal_sf(theta).clamp(U_CLAMP, 1.0 - U_CLAMP))
            } else if b <= 0.0 {
                // mirror a lower-tail interval into the upper tail
                -upper_tail_quantile(-b, -a, normal_cdf(theta).clamp(U_CLAMP, 1.0 - U_CLAMP))
            } else {
                let u = normal_cdf(theta).clamp(U_CLAMP, 1.0 - U_CLAMP);
                let (pa, pb) = (normal_cdf(a), normal_cdf(b));
                normal_quantile(pa + u * (pb - pa))
            };
            // the affine map can round one ulp outside the bounds
            Ok((mean + std * z.clamp(a, b)).clamp(lo, hi))
        }
    }
}

/// `ln(1 - Phi(z))` for `z >= TAIL_SWITCH` from the asymptotic Mills ratio.
fn log_sf_tail(z: f64) -> f64 {
    -0.5 * z * z - (z * (2.0 * std::f64::consts::PI).sqrt()).ln() + mills_series(z).ln()
}

/// `z (1 - Phi(z)) / phi(z)`; truncation error below 1e-16 for `z >= 35`.
fn mills_series(z: f64) -> f64 {
    let inv = 1.0 / (z * z);
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..=6 {
        term *= -((2 * k - 1) as f64) * inv;
        sum += term;
    }
    sum
}

/// Conditional cdf on `[a, b]`, `a >= TAIL_SWITCH`.
fn tail_cdf(a: f64, b: f64, z: f64) -> f64 {
    let la = log_sf_tail(a);
    (log_sf_tail(z) - la).exp_m1() / (log_sf_tail(b) - la).exp_m1()
}

/// Point of `[a, b]`, `a >= 0`, whose conditional survival probability is `u`.
fn upper_tail_quantile(a: f64, b: f64, u: f64) -> f64 {
    if a < TAIL_SWITCH {
        let (sa, sb) = (normal_sf(a), normal_sf(b));
        return -normal_quantile(sb + u * (sa - sb));
    }
    // survival probabilities underflow: solve ln sf(z) = target by Newton
    let la = log_sf_tail(a);
    let ratio = if b.is_finite() {
        (log_sf_tail(b) - la).exp()
    } else {
        0.0
    };
    let target = la + (u + (1.0 - u) * ratio).ln();
    let mut z = a - (u + (1.0 - u) * ratio).ln() / a;
    for _ in 0..50 {
        let step = (log_sf_tail(z) - target) * mills_series(z) / z;
        z += step;
        if step.abs() <= 1e-15 * z {
            break;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        let upflow = TransformSpec::uniform(0.1, 0.2).fixed().unwrap();
        assert!((transform_scalar(0.0, &upflow).unwrap() - 0.15).abs() < 1e-15);
        let unit = TransformSpec::uniform(0.0, 1.0).fixed().unwrap();
        assert!((transform_scalar(1.0, &unit).unwrap() - 0.841_345).abs() < 1e-6);
        assert!(transform_scalar(f64::NAN, &unit).is_err());
    }

    #[test]
    fn untruncated_normal_is_affine() {
        let t = Target::TruncatedNormal {
            mean: 2.0,
            std: 3.0,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        };
        for &x in &[-4.0, -0.3, 0.0, 1.7] {
            assert_eq!(transform_scalar(x, &t).unwrap(), 2.0 + 3.0 * x);
        }
    }

    #[test]
    fn truncated_normal_tails_stay_in_support() {
        let t = Target::TruncatedNormal {
            mean: 0.0,
            std: 1.0,
            lo: 4.0,
            hi: 6.0,
        };
        let mut prev = f64::NEG_INFINITY;
        for k in -80..=80 {
            let v = transform_scalar(k as f64 * 0.1, &t).unwrap();
            assert!((4.0..=6.0).contains(&v));
            assert!(v >= prev);
            prev = v;
        }
        let mid = transform_scalar(0.0, &t).unwrap();
        assert!((t.cdf(mid) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn far_tail_intervals() {
        // 52 standard deviations below the mean
        let t = Target::TruncatedNormal {
            mean: 2.2,
            std: 0.1,
            lo: -3.0,
            hi: -2.99,
        };
        let mut prev = f64::NEG_INFINITY;
        for k in -60..=60 {
            let v = transform_scalar(k as f64 * 0.1, &t).unwrap();
            assert!((-3.0..=-2.99).contains(&v) && v >= prev);
            assert!((t.cdf(v) - normal_cdf(k as f64 * 0.1)).abs() < 1e-6);
            prev = v;
        }
        // the switch to the asymptotic tail is continuous
        let median = |lo: f64| {
            let t = Target::TruncatedNormal {
                mean: 0.0,
                std: 1.0,
                lo,
                hi: lo + 0.5,
            };
            transform_scalar(0.0, &t).unwrap() - lo
        };
        let (below, above) = (median(TAIL_SWITCH - 1e-9), median(TAIL_SWITCH + 1e-9));
        assert!((below - above).abs() < 1e-9 * below, "{below} {above}");
    }

    #[test]
    fn references_resolve() {
        let spec = TransformSpec::TruncatedNormal {
            mean: Param::Ref { of: "base".into() },
            std: 0.5.into(),
            lo: Param::Ref { of: "base".into() },
            hi: 10.0.into(),
        };
        assert_eq!(spec.references(), vec!["base", "base"]);
        let t = spec
            .resolve(&|n| if n == "base" { Some(2.0) } else { None })
            .unwrap();
        assert!(transform_scalar(-1.0, &t).unwrap() >= 2.0);
        assert!(spec.fixed().is_err());
    }

    #[test]
    fn invalid_targets_rejected() {
        assert!(TransformSpec::uniform(1.0, 1.0).fixed().is_err());
        let n = TransformSpec::Normal {
            mean: 0.0.into(),
            std: (-1.0).into(),
        };
        assert!(n.fixed().is_err());
    }
}
