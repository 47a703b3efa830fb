//! Cross-hospital inference: Q-statistic heterogeneity, test-inversion
//! intervals for the between-hospital sd, and normal-normal shrinkage.

use thiserror::Error;

pub mod gibbs;
pub mod quantile;

pub use gibbs::{gibbs_shrinkage, AlphaPrior, GibbsConfig, HospitalPosterior, PosteriorSummary};
pub use quantile::{chi2_quantile, normal_quantile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolingError {
    #[error("need at least two hospitals, got {0}")]
    TooFewHospitals(usize),
    #[error("standard error {value} at position {index} must be positive and finite")]
    BadStandardError { index: usize, value: f64 },
    #[error("{0} estimates but {1} standard errors")]
    Length(usize, usize),
    #[error("non-finite estimate at position {0}")]
    NonFinite(usize),
    #[error("level {0} must lie in (0, 1)")]
    InvalidLevel(f64),
    #[error("cross-hospital R^2 undefined: raw tau is zero")]
    UndefinedR2,
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn validate(mu_hat: &[f64], se: &[f64]) -> Result<(), PoolingError> {
    if mu_hat.len() != se.len() {
        return Err(PoolingError::Length(mu_hat.len(), se.len()));
    }
    if mu_hat.len() < 2 {
        return Err(PoolingError::TooFewHospitals(mu_hat.len()));
    }
    if let Some(i) = mu_hat.iter().position(|m| !m.is_finite()) {
        return Err(PoolingError::NonFinite(i));
    }
    if let Some((index, &value)) = se.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
        return Err(PoolingError::BadStandardError { index, value });
    }
    Ok(())
}

fn check_level(level: f64) -> Result<(), PoolingError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(PoolingError::InvalidLevel(level))
    }
}

pub fn simple_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `sum (mu_j - mean)^2 / (se_j^2 + tau^2)` around the simple mean.
pub fn q_statistic(mu_hat: &[f64], se: &[f64], tau: f64) -> f64 {
    let m = simple_mean(mu_hat);
    let t2 = tau * tau;
    mu_hat
        .iter()
        .zip(se)
        .map(|(mu, s)| (mu - m).powi(2) / (s * s + t2))
        .sum()
}

/// Smallest `tau >= 0` with `Q(tau) <= level`; `Q` is decreasing in tau.
fn solve_q(mu_hat: &[f64], se: &[f64], level: f64) -> f64 {
    let q = |t: f64| q_statistic(mu_hat, se, t);
    if q(0.0) <= level {
        return 0.0;
    }
    let spread = mu_hat.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let mut hi = spread.max(se.iter().cloned().fold(0.0, f64::max)).max(1e-12);
    let mut lo = 0.0;
    while q(hi) > level {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if q(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Hodges-Lehmann estimate: the tau where `Q = J - 1`, or 0 when
/// `Q(0) <= J - 1`.
pub fn tau_point_estimate(mu_hat: &[f64], se: &[f64]) -> Result<f64, PoolingError> {
    validate(mu_hat, se)?;
    Ok(solve_q(mu_hat, se, (mu_hat.len() - 1) as f64))
}

/// Test-inversion interval for tau.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauInterval {
    pub lo: f64,
    pub hi: f64,
    /// `Q(0)` fell below the lower chi-square quantile: every tau is
    /// rejected. The interval is reported as (0, 0).
    pub empty: bool,
}

impl TauInterval {
    pub fn covers(&self, tau: f64) -> bool {
        !self.empty && self.lo <= tau && tau <= self.hi
    }
}

pub fn tau_ci(mu_hat: &[f64], se: &[f64], level: f64) -> Result<TauInterval, PoolingError> {
    validate(mu_hat, se)?;
    check_level(level)?;
    let df = (mu_hat.len() - 1) as f64;
    let alpha = 1.0 - level;
    let q_upper = chi2_quantile(df, 1.0 - alpha / 2.0);
    let q_lower = chi2_quantile(df, alpha / 2.0);
    let q0 = q_statistic(mu_hat, se, 0.0);
    let lo = if q0 < q_upper { 0.0 } else { solve_q(mu_hat, se, q_upper) };
    let hi = solve_q(mu_hat, se, q_lower);
    Ok(TauInterval {
        lo,
        hi,
        empty: q0 < q_lower,
    })
}

/// `mu_bar +/- z_{(1+coverage)/2} tau`.
pub fn prediction_interval(mu_bar: f64, tau: f64, coverage: f64) -> Result<(f64, f64), PoolingError> {
    check_level(coverage)?;
    let z = normal_quantile(0.5 * (1.0 + coverage));
    Ok((mu_bar - z * tau, mu_bar + z * tau))
}

/// Share of between-hospital variance explained by case mix.
pub fn cross_hospital_r2(tau_raw: f64, tau_adj: f64) -> Result<f64, PoolingError> {
    if !(tau_raw > 0.0) {
        return Err(PoolingError::UndefinedR2);
    }
    Ok(1.0 - (tau_adj / tau_raw).powi(2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneityResult {
    pub grand_mean: f64,
    pub tau_hat: f64,
    pub tau_ci: TauInterval,
    pub q_at_zero: f64,
    pub prediction_interval_80: (f64, f64),
    /// Relative to a reference (raw) tau; `None` for the reference itself
    /// or when undefined.
    pub r2_cross: Option<f64>,
}

pub fn heterogeneity(mu_hat: &[f64], se: &[f64], level: f64) -> Result<HeterogeneityResult, PoolingError> {
    let tau_hat = tau_point_estimate(mu_hat, se)?;
    let grand_mean = simple_mean(mu_hat);
    Ok(HeterogeneityResult {
        grand_mean,
        tau_hat,
        tau_ci: tau_ci(mu_hat, se, level)?,
        q_at_zero: q_statistic(mu_hat, se, 0.0),
        prediction_interval_80: prediction_interval(grand_mean, tau_hat, 0.8)?,
        r2_cross: None,
    })
}
