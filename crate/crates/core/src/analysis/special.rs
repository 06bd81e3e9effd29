//! Special functions used by the beta likelihood.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Second derivative of `ln Γ`, for `x > 0`.
///
/// Shifts the argument up with `ψ₁(x) = ψ₁(x + 1) + 1/x²` and finishes with the
/// asymptotic expansion.
pub fn trigamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // 1/x + 1/2x² + B2/x³ + B4/x⁵ + ...
    let series = r2
        * (1.0 / 6.0
            - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))));
    acc + r + 0.5 * r2 + r * series
}

/// Numerically stable `1 / (1 + e^-η)`.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Two-sided normal tail probability `P(|Z| ≥ |z|)`.
pub fn two_sided_p(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}
