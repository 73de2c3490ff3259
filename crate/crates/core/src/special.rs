//! Log-space special functions.

/// `ln Γ(x)` for `x > 0`, without forming `Γ(x)`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln C(n, k)`.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `ln Σ exp(xᵢ)` in a single streaming pass with a running max shift.
///
/// Returns `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for v in values {
        if v.is_nan() {
            return f64::NAN;
        }
        if v == f64::NEG_INFINITY {
            continue;
        }
        if v == f64::INFINITY {
            return f64::INFINITY;
        }
        if v <= max {
            sum += libm::exp(v - max);
        } else {
            sum = sum * libm::exp(max - v) + 1.0;
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(sum)
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}
