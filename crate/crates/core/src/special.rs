//! Normal-distribution helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Phi(z)` without cancellation.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `Phi(b) - Phi(a)` for `a <= b`, accurate in both tails.
pub fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

pub fn ln_normal_sf(z: f64) -> f64 {
    let q = normal_sf(z);
    if q > 0.0 {
        q.ln()
    } else {
        // asymptotic expansion far in the upper tail
        -0.5 * z * z - z.ln() - 0.5 * (2.0 * PI).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_mass(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-14);
        assert!(normal_mass(9.0, 10.0) > 0.0);
        assert!((ln_normal_sf(40.0) - normal_sf(40.0).ln()).abs() < 1e-6 || normal_sf(40.0) == 0.0);
    }
}
