//! Normal distribution functions, truncated normal inversion and the
//! modified Bessel function used by the Matérn covariance.
//!
//! Everything is evaluated in `f64`. Tail probabilities are always taken
//! from the side that avoids cancellation, so interval masses stay accurate
//! far into the tails.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// Smallest interval mass a truncated normal draw is attempted for.
pub const MIN_INTERVAL_MASS: f64 = 1e-300;

/// Standard normal CDF, with `Φ(-∞) = 0` and `Φ(∞) = 1` exactly.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - Φ(x)` without cancellation.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Standard normal quantile. `p = 0` and `p = 1` map to the infinities.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= 0.5 {
        let z = -SQRT_2 * erfc_inv(2.0 * p);
        polish(z, norm_cdf(z) - p)
    } else {
        norm_isf(1.0 - p)
    }
}

// One Halley step on `Φ(z) = target`, given the residual `Φ(z) - target`.
#[inline]
fn polish(z: f64, residual: f64) -> f64 {
    if !z.is_finite() {
        return z;
    }
    let u = residual * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * z * z).exp();
    if !u.is_finite() {
        return z;
    }
    z - u / (1.0 + 0.5 * z * u)
}

/// Quantile of the upper tail: returns `z` with `1 - Φ(z) = q`.
pub fn norm_isf(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return f64::NEG_INFINITY;
    }
    if q < 0.5 {
        let z = SQRT_2 * erfc_inv(2.0 * q);
        // Upper tail residual has the opposite sign of the CDF one.
        polish(z, q - norm_sf(z))
    } else {
        -norm_quantile(q)
    }
}

/// `Φ(hi) - Φ(lo)` for `lo ≤ hi`, computed on the tail side.
pub fn interval_mass(lo: f64, hi: f64) -> f64 {
    if !(lo < hi) {
        return 0.0;
    }
    if lo >= 0.0 {
        (norm_sf(lo) - norm_sf(hi)).max(0.0)
    } else if hi <= 0.0 {
        (norm_cdf(hi) - norm_cdf(lo)).max(0.0)
    } else {
        ((0.5 - norm_cdf(lo)) + (0.5 - norm_sf(hi))).max(0.0)
    }
}

/// Inverse-CDF draw from a standard normal truncated to `(lo, hi)`.
///
/// `u` is a uniform variate in `(0, 1)`. The result lies strictly inside the
/// interval. Fails when the interval carries less than [`MIN_INTERVAL_MASS`].
pub fn truncated_std_normal(lo: f64, hi: f64, u: f64) -> Result<f64> {
    let mass = interval_mass(lo, hi);
    if mass < MIN_INTERVAL_MASS {
        return Err(Error::IntervalMassUnderflow { mass });
    }
    let z = if lo >= 0.0 {
        let qa = norm_sf(lo);
        norm_isf(qa - u * (qa - norm_sf(hi)))
    } else if hi <= 0.0 {
        let pa = norm_cdf(lo);
        norm_quantile(pa + u * (norm_cdf(hi) - pa))
    } else {
        let p = norm_cdf(lo) + u * mass;
        if p < 0.5 {
            norm_quantile(p)
        } else {
            norm_isf(norm_sf(hi) + (1.0 - u) * mass)
        }
    };
    Ok(clamp_open(z, lo, hi))
}

/// Inverse-CDF draw from `N(mean, sd²)` truncated to `(a, b)`.
pub fn truncated_normal(mean: f64, sd: f64, a: f64, b: f64, u: f64) -> Result<f64> {
    if !(sd > 0.0) {
        return Err(Error::invalid(format!("standard deviation must be positive, got {sd}")));
    }
    if !(a < b) {
        return Err(Error::EmptyInterval { index: 0 });
    }
    let z = truncated_std_normal((a - mean) / sd, (b - mean) / sd, u)?;
    Ok(clamp_open(mean + sd * z, a, b))
}

#[inline]
fn clamp_open(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        lo.next_up().min(hi.next_down())
    } else if x >= hi {
        hi.next_down().max(lo.next_up())
    } else {
        x
    }
}

pub use statrs::function::gamma::{gamma, ln_gamma};

/// Modified Bessel function of the second kind, `K_ν(x)` for `x > 0`.
///
/// Trapezoidal rule on `∫₀^∞ exp(-x cosh t) cosh(ν t) dt`; the integrand is
/// analytic and decays doubly exponentially, so the rule converges
/// geometrically in the step size.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k needs x > 0");
    let nu = nu.abs();
    let h = 0.02;
    // Scale by exp(x) to keep the integrand O(1) near t = 0 for large x.
    let term = |t: f64| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
    let mut sum = 0.5 * term(0.0);
    let mut k = 1usize;
    loop {
        let v = term(k as f64 * h);
        sum += v;
        if v < 1e-18 * sum || k > 200_000 {
            break;
        }
        k += 1;
    }
    sum * h * (-x).exp()
}
