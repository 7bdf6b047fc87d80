//! Covariance functions of the simulation examples.

use std::f64::consts::PI;

use crate::special::{bessel_k, gamma};

/// Matérn covariance in `d` dimensions, parametrised by `κ²` and `φ²`.
pub fn matern_cov(h: f64, nu: f64, kappa2: f64, phi2: f64, d: usize) -> f64 {
    assert!(h >= 0.0 && nu > 0.0 && kappa2 > 0.0 && phi2 > 0.0, "invalid Matérn parameters");
    let half_d = d as f64 / 2.0;
    let kappa = kappa2.sqrt();
    let scale = phi2 / ((4.0 * PI).powf(half_d) * gamma(nu + half_d) * kappa.powf(2.0 * nu));
    if h == 0.0 {
        return scale * gamma(nu);
    }
    let t = kappa * h;
    scale * 2f64.powf(1.0 - nu) * t.powf(nu) * bessel_k(nu, t)
}

/// `exp(-h/λ)`.
pub fn exponential_cov(h: f64, lambda: f64) -> f64 {
    (-h.abs() / lambda).exp()
}
