//! Standard normal distribution functions.
//!
//! The complementary error function comes from `libm` (sub-ulp accuracy);
//! the inverse starts from `statrs` and is polished by a Newton step.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// 1 − Φ(x), accurate far into the upper tail.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Φ⁻¹(p) for p in [0, 1].
pub fn quantile(p: f64) -> f64 {
    if p <= 0.5 {
        -lower_tail_inverse(p)
    } else {
        lower_tail_inverse(1.0 - p)
    }
}

/// Upper-tail critical value: the `z` with 1 − Φ(z) = `tail`.
pub fn upper_critical(tail: f64) -> f64 {
    -quantile(tail)
}

/// The `z ≥ 0` with 1 − Φ(z) = `q`, for `q` in [0, 0.5], polished with one
/// Newton step on the survival function.
fn lower_tail_inverse(q: f64) -> f64 {
    let z = SQRT_2 * erfc_inv(2.0 * q);
    if !z.is_finite() || q <= 0.0 {
        return z;
    }
    let dens = pdf(z);
    if dens < 1e-300 {
        return z;
    }
    z + (sf(z) - q) / dens
}

/// Φ(b) − Φ(a) for a ≤ b, computed on whichever side avoids cancellation.
pub fn interval_prob(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        sf(a) - sf(b)
    } else if b < 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - cdf(a) - sf(b)
    }
}

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
