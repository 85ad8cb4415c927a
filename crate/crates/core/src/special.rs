//! Special functions: Gamma, modified Bessel K, and the standard normal law.

use statrs::function::erf;

pub use statrs::function::gamma::gamma;

/// Modified Bessel function of the second kind, `K_nu(x)` for `x > 0`.
///
/// Evaluated from `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` with the
/// trapezoidal rule, which converges geometrically for this analytic,
/// doubly-exponentially decaying integrand.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k requires x > 0");
    let h = 0.01;
    // integrand scaled by exp(x) to avoid underflow for large x
    let f = |t: f64| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    let mut sum = 0.5 * f(0.0);
    let mut k = 1usize;
    loop {
        let v = f(k as f64 * h);
        sum += v;
        if v < 1e-18 * sum || k > 200_000 {
            break;
        }
        k += 1;
    }
    sum * h * (-x).exp()
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Phi(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    // erfc_inv keeps full relative precision in both tails
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}
