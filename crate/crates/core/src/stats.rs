//! Shared numeric primitives: stable log-sum-exp, Gaussian densities, the
//! Mills ratio, and small sample-statistics helpers.

use crate::scalar::{real, Real};

/// ln(2π)
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Threshold above which the Mills ratio is evaluated by continued fraction
/// rather than through the normal survival function. The fraction is
/// converged to the last bit from here on, while `erfc` loses digits.
const MILLS_CF_CUTOFF: f64 = 6.0;

/// Log-density of N(mu, sigma^2) at `x`.
#[inline]
pub fn normal_log_pdf<R: Real>(x: R, mu: R, sigma: R) -> R {
    let t = (x - mu) / sigma;
    -real::<R>(0.5) * t * t - sigma.ln() - real::<R>(0.5 * LN_2PI)
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf<R: Real>(x: R) -> R {
    (-real::<R>(0.5) * x * x).exp() / real::<R>((2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal survival function 1 - Phi(x), clamped to [0, 1].
///
/// Evaluated through double-precision `erfc`; accurate into the deep tail
/// until `erfc` underflows around x ≈ 38.
pub fn std_normal_sf<R: Real>(x: R) -> R {
    let xf = x.to_f64().unwrap_or(f64::NAN);
    let sf = 0.5 * statrs::function::erf::erfc(xf / std::f64::consts::SQRT_2);
    real(sf.clamp(0.0, 1.0))
}

/// Standard normal CDF.
pub fn std_normal_cdf<R: Real>(x: R) -> R {
    std_normal_sf(-x)
}

/// Inverse Mills ratio κ(x) = φ(x) / (1 - Φ(x)).
pub fn mills_ratio<R: Real>(x: R) -> R {
    x + mills_gap(x)
}

/// The gap κ(x) - x, computed without cancellation.
///
/// For moderate arguments the ratio φ(x)/(1-Φ(x)) is evaluated directly; in
/// the right tail the Laplace continued fraction gives the gap itself,
///
///   κ(x) - x = 1 / (x + 2/(x + 3/(x + 4/(x + ...)))),
///
/// which stays accurate where the direct form would lose all digits.
pub fn mills_gap<R: Real>(x: R) -> R {
    if x < real(MILLS_CF_CUTOFF) {
        std_normal_pdf(x) / std_normal_sf(x) - x
    } else {
        // Backward recurrence; depth 64 is far past convergence for x >= 6.
        let mut tail = x;
        for k in (2..=64u32).rev() {
            tail = x + real::<R>(f64::from(k)) / tail;
        }
        tail.recip()
    }
}

/// log(Σ exp(v_i)) with the usual max shift; -∞ for an empty or all -∞ input.
pub fn log_sum_exp<R: Real>(values: &[R]) -> R {
    let mut m = R::neg_infinity();
    for &v in values {
        if v > m {
            m = v;
        }
    }
    if m == R::neg_infinity() {
        return m;
    }
    let sum: R = values.iter().map(|&v| (v - m).exp()).sum();
    m + sum.ln()
}

pub fn mean<R: Real>(values: &[R]) -> R {
    let n = real::<R>(values.len() as f64);
    values.iter().copied().sum::<R>() / n
}

/// Population variance (divides by n).
pub fn population_variance<R: Real>(values: &[R]) -> R {
    let m = mean(values);
    let n = real::<R>(values.len() as f64);
    values.iter().map(|&v| (v - m) * (v - m)).sum::<R>() / n
}

/// Lower median: for even n the smaller of the two central order statistics.
pub fn lower_median<R: Real>(values: &[R]) -> R {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    sorted[(sorted.len() - 1) / 2]
}
