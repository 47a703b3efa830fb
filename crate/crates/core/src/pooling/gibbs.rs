//! Normal-normal hierarchical model with known standard errors:
//! `mu_hat_j ~ N(mu_j, se_j^2)`, `mu_j ~ N(alpha, tau^2)`, flat prior on
//! `tau > 0`, uniform prior on `alpha`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::quantile::{normal_cdf, normal_quantile};
use super::{validate, PoolingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlphaPrior {
    /// Uniform on [0, 1], for rates.
    #[default]
    UnitInterval,
    /// Improper flat prior on the real line.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    /// Iterations per chain, burn-in included.
    pub iters: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    pub alpha_prior: AlphaPrior,
    /// Hold alpha at this value instead of sampling it.
    pub fixed_alpha: Option<f64>,
    /// Hold tau at this value instead of sampling it. Zero means complete
    /// pooling.
    pub fixed_tau: Option<f64>,
    pub rhat_threshold: f64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            burn_in: 1000,
            chains: 4,
            seed: 0,
            alpha_prior: AlphaPrior::UnitInterval,
            fixed_alpha: None,
            fixed_tau: None,
            rhat_threshold: 1.05,
        }
    }
}

impl GibbsConfig {
    fn validate(&self) -> Result<(), PoolingError> {
        let bad = |m: &str| Err(PoolingError::InvalidConfig(m.into()));
        if self.iters <= self.burn_in {
            return bad("iters must exceed burn_in");
        }
        if self.chains == 0 {
            return bad("need at least one chain");
        }
        if self.iters - self.burn_in < 4 {
            return bad("need at least 4 retained draws per chain");
        }
        if let Some(t) = self.fixed_tau {
            if !(t >= 0.0 && t.is_finite()) {
                return bad("fixed tau must be finite and non-negative");
            }
        }
        if let Some(a) = self.fixed_alpha {
            if !a.is_finite() {
                return bad("fixed alpha must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HospitalPosterior {
    pub post_mean: f64,
    pub post_sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub prob_worst_decile: f64,
    /// Draws in which the hospital was among the worst decile.
    pub worst_count: u64,
    /// Batch-means Monte Carlo standard error of `post_mean`.
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub hospitals: Vec<HospitalPosterior>,
    /// Retained draws, chains concatenated in order.
    pub alpha_draws: Vec<f64>,
    pub tau_draws: Vec<f64>,
    pub rhat_alpha: f64,
    pub rhat_tau: f64,
    /// Largest split-chain R-hat over alpha, tau and every mu_j.
    pub max_rhat: f64,
    pub converged: bool,
    /// Hospitals counted as the worst decile in each draw.
    pub worst_k: usize,
    pub draws: usize,
}

/// `sum (mu_j / se_j^2) / sum (1 / se_j^2)`.
pub fn precision_weighted_mean(mu_hat: &[f64], se: &[f64]) -> f64 {
    let (num, den) = mu_hat
        .iter()
        .zip(se)
        .fold((0.0, 0.0), |(n, d), (m, s)| (n + m / (s * s), d + 1.0 / (s * s)));
    num / den
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Open-interval uniform.
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `N(m, s^2)` restricted to `[a, b]`.
fn truncated_normal(rng: &mut ChaCha8Rng, m: f64, s: f64, a: f64, b: f64) -> f64 {
    let (za, zb) = ((a - m) / s, (b - m) / s);
    // work in the lower tail where the cdf keeps its precision
    let (flip, lo, hi) = if za > 0.0 { (true, -zb, -za) } else { (false, za, zb) };
    let (pa, pb) = (normal_cdf(lo), normal_cdf(hi));
    let z = if pb - pa > 0.25 {
        loop {
            let z = normal(rng);
            if z >= lo && z <= hi {
                break z;
            }
        }
    } else if pb - pa > 0.0 {
        normal_quantile(pa + uniform(rng) * (pb - pa)).clamp(lo, hi)
    } else {
        hi
    };
    let z = if flip { -z } else { z };
    m + s * z
}

/// One slice-sampling update of `tau` on the log scale. The target in
/// `eta = ln tau` is `-(J-1) eta - S exp(-2 eta) / 2`.
fn slice_tau(rng: &mut ChaCha8Rng, tau: f64, j: usize, s: f64) -> f64 {
    let logf = |eta: f64| -((j - 1) as f64) * eta - 0.5 * s * (-2.0 * eta).exp();
    let x0 = tau.ln();
    let level = logf(x0) + uniform(rng).ln();
    let w = 1.0;
    let mut l = x0 - w * uniform(rng);
    let mut r = l + w;
    for _ in 0..100 {
        if logf(l) <= level {
            break;
        }
        l -= w;
    }
    for _ in 0..100 {
        if logf(r) <= level {
            break;
        }
        r += w;
    }
    loop {
        let x1 = l + uniform(rng) * (r - l);
        if logf(x1) > level {
            return x1.exp();
        }
        if x1 < x0 {
            l = x1;
        } else {
            r = x1;
        }
        if r - l < 1e-14 {
            return tau;
        }
    }
}

struct ChainDraws {
    alpha: Vec<f64>,
    tau: Vec<f64>,
    /// Row-major, one row of J values per retained draw.
    mu: Vec<f64>,
    worst: Vec<u64>,
}

fn run_chain(mu_hat: &[f64], se: &[f64], config: &GibbsConfig, chain: usize, worst_k: usize) -> ChainDraws {
    let j = mu_hat.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let bounded = config.alpha_prior == AlphaPrior::UnitInterval;

    let mean = super::simple_mean(mu_hat);
    let spread = (mu_hat.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (j - 1) as f64)
        .sqrt()
        .max(1e-3);
    let mut alpha = config.fixed_alpha.unwrap_or(mean + 0.5 * spread * normal(&mut rng));
    if bounded && config.fixed_alpha.is_none() {
        alpha = alpha.clamp(0.0, 1.0);
    }
    let mut tau = config.fixed_tau.unwrap_or(spread * (0.5 * normal(&mut rng)).exp());
    let mut mu = mu_hat.to_vec();

    let keep = config.iters - config.burn_in;
    let mut out = ChainDraws {
        alpha: Vec::with_capacity(keep),
        tau: Vec::with_capacity(keep),
        mu: Vec::with_capacity(keep * j),
        worst: vec![0; j],
    };
    let mut order: Vec<usize> = (0..j).collect();
    for it in 0..config.iters {
        // alpha with mu integrated out, then mu given alpha
        if config.fixed_alpha.is_none() {
            let t2 = tau * tau;
            let (num, den) = mu_hat
                .iter()
                .zip(se)
                .fold((0.0, 0.0), |(n, d), (m, s)| {
                    let w = 1.0 / (s * s + t2);
                    (n + w * m, d + w)
                });
            let (m, sd) = (num / den, den.recip().sqrt());
            alpha = if bounded {
                truncated_normal(&mut rng, m, sd, 0.0, 1.0)
            } else {
                m + sd * normal(&mut rng)
            };
        }
        if tau == 0.0 {
            mu.iter_mut().for_each(|x| *x = alpha);
        } else {
            let inv_t2 = 1.0 / (tau * tau);
            for ((x, m), s) in mu.iter_mut().zip(mu_hat).zip(se) {
                let prec = 1.0 / (s * s) + inv_t2;
                let mean = (m / (s * s) + alpha * inv_t2) / prec;
                *x = mean + normal(&mut rng) / prec.sqrt();
            }
        }
        if config.fixed_tau.is_none() {
            let ss: f64 = mu.iter().map(|x| (x - alpha).powi(2)).sum();
            tau = slice_tau(&mut rng, tau, j, ss);
        }

        if it >= config.burn_in {
            out.alpha.push(alpha);
            out.tau.push(tau);
            out.mu.extend_from_slice(&mu);
            order.select_nth_unstable_by(worst_k - 1, |&a, &b| mu[b].total_cmp(&mu[a]).then(a.cmp(&b)));
            for &h in &order[..worst_k] {
                out.worst[h] += 1;
            }
        }
    }
    out
}

/// Split-chain potential scale reduction.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[c.len() - half..]])
        .collect();
    let n = half as f64;
    let means: Vec<f64> = pieces.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let m = pieces.len() as f64;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = pieces
        .iter()
        .zip(&means)
        .map(|(p, mean)| p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

const BATCHES_PER_CHAIN: usize = 20;

fn batch_means_se(chains: &[Vec<f64>]) -> f64 {
    let mut means = Vec::new();
    for c in chains {
        let size = (c.len() / BATCHES_PER_CHAIN).max(1);
        for b in c.chunks_exact(size) {
            means.push(b.iter().sum::<f64>() / size as f64);
        }
    }
    let k = means.len() as f64;
    if k < 2.0 {
        return f64::NAN;
    }
    let m = means.iter().sum::<f64>() / k;
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
}

/// Runs the chains in parallel and summarizes the pooled retained draws.
///
/// Hospitals are identified by position; ties in the worst-decile ranking
/// go to the earlier position, so callers should pass hospitals sorted by id.
pub fn gibbs_shrinkage(mu_hat: &[f64], se: &[f64], config: &GibbsConfig) -> Result<PosteriorSummary, PoolingError> {
    validate(mu_hat, se)?;
    config.validate()?;
    let j = mu_hat.len();
    let worst_k = j.div_ceil(10);
    let chains: Vec<ChainDraws> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(mu_hat, se, config, c, worst_k))
        .collect();
    let keep = config.iters - config.burn_in;
    let draws = keep * config.chains;

    let mut max_rhat: f64 = 1.0;
    let mut note = |r: f64| {
        if r.is_finite() {
            max_rhat = max_rhat.max(r);
        }
        r
    };
    let rhat_alpha = if config.fixed_alpha.is_some() {
        1.0
    } else {
        note(split_rhat(&chains.iter().map(|c| c.alpha.as_slice()).collect::<Vec<_>>()))
    };
    let rhat_tau = if config.fixed_tau.is_some() {
        1.0
    } else {
        note(split_rhat(&chains.iter().map(|c| c.tau.as_slice()).collect::<Vec<_>>()))
    };

    let mut hospitals = Vec::with_capacity(j);
    for h in 0..j {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.mu.iter().skip(h).step_by(j).cloned().collect())
            .collect();
        if config.fixed_tau != Some(0.0) {
            note(split_rhat(&per_chain.iter().map(|c| c.as_slice()).collect::<Vec<_>>()));
        }
        let mut all: Vec<f64> = per_chain.iter().flatten().cloned().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        all.sort_by(f64::total_cmp);
        let worst_count: u64 = chains.iter().map(|c| c.worst[h]).sum();
        hospitals.push(HospitalPosterior {
            post_mean: mean,
            post_sd: sd,
            ci_lo: quantile_sorted(&all, 0.025),
            ci_hi: quantile_sorted(&all, 0.975),
            prob_worst_decile: worst_count as f64 / draws as f64,
            worst_count,
            mc_se: batch_means_se(&per_chain),
        });
    }
    let converged = max_rhat <= config.rhat_threshold;
    if !converged {
        log::warn!("gibbs: max split R-hat {max_rhat:.4} exceeds {}", config.rhat_threshold);
    }
    Ok(PosteriorSummary {
        hospitals,
        alpha_draws: chains.iter().flat_map(|c| c.alpha.iter().cloned()).collect(),
        tau_draws: chains.iter().flat_map(|c| c.tau.iter().cloned()).collect(),
        rhat_alpha,
        rhat_tau,
        max_rhat,
        converged,
        worst_k,
        draws,
    })
}
