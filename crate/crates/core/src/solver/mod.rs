//! Per-hospital balancing weights.
//!
//! For hospital `j` with basis rows `Phi_j` (n_j x p) and balance target `t`,
//! the weights minimize
//!
//! ```text
//! f(g) = ||t - Phi_j' g||^2 + (lambda * n_j + eps) ||g||^2
//! s.t.   sum g = 1,  lower <= g_i <= upper
//! ```
//!
//! The first term is the covariate imbalance, the second the dispersion
//! penalty (`1 / ess`). Hospitals are independent, so [`solve_all`] solves
//! them in parallel over a shared read-only basis.

mod projection;

pub use projection::{check_feasible, project_into, project_simplex_box};

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{BasisMatrix, Cohort};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("infeasible bounds for {n} weights: need n*lower <= 1 <= n*upper (lower={lower}, upper={upper})")]
    Infeasible { n: usize, lower: f64, upper: f64 },
    #[error("non-finite value in solver input")]
    NonFinite,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    pub lower: f64,
    pub upper: f64,
    /// Convergence threshold on the projected-gradient residual (sup norm).
    pub tol_kkt: f64,
    pub max_iter: usize,
    /// Ridge added to the dispersion penalty so the minimizer is unique at
    /// `lambda = 0`.
    pub ridge_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            lower: 0.0,
            upper: 1.0,
            tol_kkt: 1e-8,
            max_iter: 50_000,
            ridge_epsilon: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidConfig(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lower >= 0.0) || !(self.upper >= self.lower) || !self.upper.is_finite() {
            return bad(format!(
                "bounds must satisfy 0 <= lower <= upper, got [{}, {}]",
                self.lower, self.upper
            ));
        }
        if !(self.tol_kkt > 0.0) {
            return bad(format!("tol_kkt must be > 0, got {}", self.tol_kkt));
        }
        if !(self.ridge_epsilon >= 0.0) {
            return bad(format!("ridge_epsilon must be >= 0, got {}", self.ridge_epsilon));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }
}

/// Weights and diagnostics for one hospital.
#[derive(Debug, Clone, PartialEq)]
pub struct HospitalWeights {
    pub hospital_id: String,
    /// Weights in the hospital's row order (file order).
    pub gamma: Vec<f64>,
    /// Effective sample size `1 / sum gamma^2`.
    pub ess: f64,
    /// `sum gamma_i phi(X_i) - target`.
    pub imbalance: Vec<f64>,
    pub imbalance_l2: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

impl HospitalWeights {
    pub fn n(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HospitalFailure {
    pub hospital_id: String,
    pub error: SolverError,
}

/// Weights for every hospital of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// Sorted by hospital id.
    pub hospitals: Vec<HospitalWeights>,
    pub failures: Vec<HospitalFailure>,
    pub config: SolverConfig,
}

impl WeightSet {
    pub fn get(&self, hospital_id: &str) -> Option<&HospitalWeights> {
        self.hospitals
            .binary_search_by(|h| h.hospital_id.as_str().cmp(hospital_id))
            .ok()
            .map(|i| &self.hospitals[i])
    }

    pub fn avg_ess(&self) -> f64 {
        if self.hospitals.is_empty() {
            return f64::NAN;
        }
        self.hospitals.iter().map(|h| h.ess).sum::<f64>() / self.hospitals.len() as f64
    }

    pub fn all_converged(&self) -> bool {
        self.failures.is_empty() && self.hospitals.iter().all(|h| h.converged)
    }
}

/// Objective evaluation and gradient for one hospital.
struct Problem<'a> {
    phi: ArrayView2<'a, f64>,
    target: ArrayView1<'a, f64>,
    penalty: f64,
    lower: f64,
    upper: f64,
}

impl Problem<'_> {
    fn weighted_mean(&self, gamma: &[f64]) -> Array1<f64> {
        let mut m = Array1::<f64>::zeros(self.phi.ncols());
        for (row, &g) in self.phi.outer_iter().zip(gamma) {
            m.scaled_add(g, &row);
        }
        m
    }

    fn gradient(&self, gamma: &[f64], grad: &mut [f64]) {
        let resid = self.weighted_mean(gamma) - &self.target;
        for ((row, &g), out) in self.phi.outer_iter().zip(gamma).zip(grad.iter_mut()) {
            *out = 2.0 * row.dot(&resid) + 2.0 * self.penalty * g;
        }
    }

    fn objective(&self, gamma: &[f64]) -> f64 {
        let resid = self.weighted_mean(gamma) - &self.target;
        resid.dot(&resid) + self.penalty * gamma.iter().map(|g| g * g).sum::<f64>()
    }

    /// `|| g - P(g - grad f(g)) ||_inf`, zero exactly at the optimum.
    fn kkt_residual(&self, gamma: &[f64], scratch: &mut [f64], proj: &mut [f64]) -> Result<f64, SolverError> {
        self.gradient(gamma, scratch);
        for (s, &g) in scratch.iter_mut().zip(gamma) {
            *s = g - *s;
        }
        project_into(scratch, self.lower, self.upper, proj)?;
        Ok(gamma
            .iter()
            .zip(proj.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Largest eigenvalue of `Phi' Phi` by power iteration.
    fn sigma_max_sq(&self) -> f64 {
        let p = self.phi.ncols();
        if p == 0 {
            return 0.0;
        }
        let gram = self.phi.t().dot(&self.phi);
        let mut v = Array1::from_iter((0..p).map(|k| 1.0 + 0.01 * k as f64));
        let mut est = 0.0;
        for _ in 0..1000 {
            let norm = v.dot(&v).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v /= norm;
            let w = gram.dot(&v);
            let next = v.dot(&w);
            v = w;
            if (next - est).abs() <= 1e-12 * next.abs() {
                est = next;
                break;
            }
            est = next;
        }
        // never below the largest diagonal entry (a Rayleigh quotient)
        est.max(gram.diag().iter().cloned().fold(0.0, f64::max))
    }
}

/// Solves one hospital's weighting problem from the uniform start.
pub fn solve_hospital(
    hospital_id: &str,
    phi: ArrayView2<f64>,
    target: ArrayView1<f64>,
    config: &SolverConfig,
) -> Result<HospitalWeights, SolverError> {
    solve_hospital_from(hospital_id, phi, target, config, None)
}

/// Solves one hospital's weighting problem, optionally warm-started.
///
/// Runs accelerated projected gradient (FISTA with gradient-based restart)
/// with step `1/L`. Returns the iterate with the smallest KKT residual; if
/// that exceeds `tol_kkt` after `max_iter` iterations the result is flagged
/// `converged = false` rather than failing.
pub fn solve_hospital_from(
    hospital_id: &str,
    phi: ArrayView2<f64>,
    target: ArrayView1<f64>,
    config: &SolverConfig,
    init: Option<&[f64]>,
) -> Result<HospitalWeights, SolverError> {
    config.validate()?;
    let n = phi.nrows();
    if phi.ncols() != target.len() {
        return Err(SolverError::Dimension(format!(
            "basis has {} columns, target has {}",
            phi.ncols(),
            target.len()
        )));
    }
    check_feasible(n, config.lower, config.upper)?;
    if phi.iter().chain(target.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let problem = Problem {
        phi,
        target,
        penalty: config.lambda * n as f64 + config.ridge_epsilon,
        lower: config.lower,
        upper: config.upper,
    };

    let mut x = vec![0.0; n];
    match init {
        Some(g) if g.len() == n => project_into(g, config.lower, config.upper, &mut x)?,
        _ => project_into(&vec![1.0 / n as f64; n], config.lower, config.upper, &mut x)?,
    }

    let mut grad = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut proj = vec![0.0; n];
    let mut best = x.clone();
    let mut best_res = problem.kkt_residual(&x, &mut scratch, &mut proj)?;
    let mut iterations = 0;

    if best_res > config.tol_kkt && n > 1 {
        let sigma = problem.sigma_max_sq().sqrt() * 1.01;
        let lipschitz = (2.0 * (sigma * sigma + problem.penalty)).max(f64::MIN_POSITIVE);
        let step = 1.0 / lipschitz;

        let mut y = x.clone();
        let mut x_new = vec![0.0; n];
        let mut t = 1.0f64;
        const CHECK_EVERY: usize = 5;
        for k in 1..=config.max_iter {
            iterations = k;
            problem.gradient(&y, &mut grad);
            for ((s, &yi), &gi) in scratch.iter_mut().zip(&y).zip(&grad) {
                *s = yi - step * gi;
            }
            project_into(&scratch, config.lower, config.upper, &mut x_new)?;

            // restart momentum when it points against the gradient step
            let mut align = 0.0;
            for i in 0..n {
                align += (y[i] - x_new[i]) * (x_new[i] - x[i]);
            }
            if align > 0.0 {
                t = 1.0;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            for i in 0..n {
                y[i] = x_new[i] + momentum * (x_new[i] - x[i]);
            }
            std::mem::swap(&mut x, &mut x_new);
            t = t_next;

            if k % CHECK_EVERY == 0 || k == config.max_iter {
                let res = problem.kkt_residual(&x, &mut scratch, &mut proj)?;
                if res < best_res {
                    best_res = res;
                    best.copy_from_slice(&x);
                }
                if res <= config.tol_kkt {
                    break;
                }
            }
        }
    }

    let imbalance = problem.weighted_mean(&best) - &problem.target;
    let imbalance_l2 = imbalance.dot(&imbalance).sqrt();
    let sum_sq: f64 = best.iter().map(|g| g * g).sum();
    Ok(HospitalWeights {
        hospital_id: hospital_id.to_string(),
        ess: 1.0 / sum_sq,
        objective: problem.objective(&best),
        imbalance: imbalance.to_vec(),
        imbalance_l2,
        kkt_residual: best_res,
        iterations,
        converged: best_res <= config.tol_kkt,
        gamma: best,
    })
}

/// Solves every hospital of the cohort. Outcomes are never consulted.
pub fn solve_all(basis: &BasisMatrix, cohort: &Cohort, config: &SolverConfig) -> WeightSet {
    solve_all_from(basis, cohort, config, None)
}

/// [`solve_all`] with per-hospital warm starts taken from `warm` when the
/// hospital is present there with matching size.
pub fn solve_all_from(
    basis: &BasisMatrix,
    cohort: &Cohort,
    config: &SolverConfig,
    warm: Option<&WeightSet>,
) -> WeightSet {
    let target = basis.target();
    let jobs: Vec<(&String, &Vec<usize>)> = cohort.hospitals().iter().collect();
    let results: Vec<Result<HospitalWeights, HospitalFailure>> = jobs
        .par_iter()
        .map(|(id, rows)| {
            let phi_j = basis.rows(rows);
            let init = warm
                .and_then(|w| w.get(id))
                .filter(|h| h.n() == rows.len())
                .map(|h| h.gamma.as_slice());
            solve_hospital_from(id, phi_j.view(), target.view(), config, init).map_err(|error| {
                HospitalFailure {
                    hospital_id: (*id).clone(),
                    error,
                }
            })
        })
        .collect();
    let mut hospitals = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(h) => hospitals.push(h),
            Err(f) => {
                log::warn!("hospital `{}`: {}", f.hospital_id, f.error);
                failures.push(f)
            }
        }
    }
    WeightSet {
        hospitals,
        failures,
        config: *config,
    }
}
