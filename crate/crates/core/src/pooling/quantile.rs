//! Chi-square and standard normal quantiles.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_lr;

/// Chi-square CDF with `df` degrees of freedom.
pub fn chi2_cdf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * df, 0.5 * x)
    }
}

/// Inverse chi-square CDF by bracketing and bisection on the regularized
/// incomplete gamma function.
pub fn chi2_quantile(df: f64, p: f64) -> f64 {
    assert!(df > 0.0 && (0.0..1.0).contains(&p), "chi2_quantile({df}, {p})");
    if p == 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = df.max(1.0);
    while chi2_cdf(df, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(df, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}
