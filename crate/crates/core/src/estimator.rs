//! Hospital estimates from weights: weighted means, pooled standard errors,
//! and regression bias correction with a hospital fixed-effects model.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::data::{BasisMatrix, Cohort};
use crate::linalg::{solve_spd, SingularError};
use crate::solver::WeightSet;

/// `sum gamma^2` at or above `1 - UNDEFINED_TOL` means a single effective unit.
pub const UNDEFINED_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("variance undefined: weights concentrate on a single effective unit")]
    UndefinedVariance,
    #[error("pooling error: no hospital has a defined variance")]
    NoPooledVariance,
    #[error("model not identifiable: p = {p} must be below n - J = {dof}")]
    NotIdentifiable { p: usize, dof: usize },
    #[error("singular outcome model: collinear columns {columns:?}")]
    SingularModel { columns: Vec<String> },
}

/// Which per-hospital variance estimator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceFormula {
    /// `sum g (v - mu)^2 / (1 - sum g^2)`.
    #[default]
    Normalized,
    /// `sum g^2 (v - mu)^2 / (sum g^2 - 1)`; non-positive for normalized
    /// weights, kept only for comparison.
    Literal,
}

fn check_alignment(weights: &WeightSet, cohort: &Cohort, values: &[f64]) -> Result<(), EstimateError> {
    if values.len() != cohort.n() {
        return Err(EstimateError::Alignment(format!(
            "{} values for {} patients",
            values.len(),
            cohort.n()
        )));
    }
    for h in &weights.hospitals {
        let rows = cohort
            .hospital_rows(&h.hospital_id)
            .map_err(|e| EstimateError::Alignment(e.to_string()))?;
        if rows.len() != h.gamma.len() {
            return Err(EstimateError::Alignment(format!(
                "hospital `{}` has {} weights for {} patients",
                h.hospital_id,
                h.gamma.len(),
                rows.len()
            )));
        }
    }
    Ok(())
}

fn weighted_sum(gamma: &[f64], rows: &[usize], values: &[f64]) -> f64 {
    gamma.iter().zip(rows).map(|(g, &r)| g * values[r]).sum()
}

/// `sum gamma_i v_i` per hospital, in the order of `weights.hospitals`.
pub fn weighted_means(weights: &WeightSet, cohort: &Cohort, values: &[f64]) -> Result<Vec<f64>, EstimateError> {
    check_alignment(weights, cohort, values)?;
    Ok(weights
        .hospitals
        .iter()
        .map(|h| {
            let rows = &cohort.hospitals()[&h.hospital_id];
            weighted_sum(&h.gamma, rows, values)
        })
        .collect())
}

/// Weighted variance of `values` around `mu` for normalized weights.
pub fn hospital_variance(gamma: &[f64], values: &[f64], mu: f64) -> Result<f64, EstimateError> {
    if gamma.len() != values.len() {
        return Err(EstimateError::Alignment(format!(
            "{} weights for {} values",
            gamma.len(),
            values.len()
        )));
    }
    let sum_sq: f64 = gamma.iter().map(|g| g * g).sum();
    if sum_sq >= 1.0 - UNDEFINED_TOL {
        return Err(EstimateError::UndefinedVariance);
    }
    let ss: f64 = gamma.iter().zip(values).map(|(g, v)| g * (v - mu).powi(2)).sum();
    Ok((ss / (1.0 - sum_sq)).max(0.0))
}

/// The squared-weight variant; see [`VarianceFormula::Literal`].
pub fn hospital_variance_literal(gamma: &[f64], values: &[f64], mu: f64) -> Result<f64, EstimateError> {
    let sum_sq: f64 = gamma.iter().map(|g| g * g).sum();
    let denom = sum_sq - 1.0;
    if denom.abs() < UNDEFINED_TOL {
        return Err(EstimateError::UndefinedVariance);
    }
    let ss: f64 = gamma.iter().zip(values).map(|(g, v)| g * g * (v - mu).powi(2)).sum();
    Ok(ss / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledSe {
    pub sigma2_pool: f64,
    pub sigma_pool: f64,
    /// Per-hospital variances; `None` where undefined.
    pub variances: Vec<Option<f64>>,
    /// `sigma_pool / sqrt(ess_j)` for every hospital.
    pub se: Vec<f64>,
}

/// Pools per-hospital variances with ESS weights. Hospitals with undefined
/// variance carry zero weight but still receive a standard error.
pub fn pool_variances(ess: &[f64], variances: &[Option<f64>]) -> Result<PooledSe, EstimateError> {
    if ess.len() != variances.len() {
        return Err(EstimateError::Alignment("ess/variance length mismatch".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, v) in ess.iter().zip(variances) {
        if let Some(v) = v {
            num += e * v;
            den += e;
        }
    }
    if den <= 0.0 {
        return Err(EstimateError::NoPooledVariance);
    }
    let sigma2_pool = num / den;
    let sigma_pool = sigma2_pool.sqrt();
    Ok(PooledSe {
        sigma2_pool,
        sigma_pool,
        variances: variances.to_vec(),
        se: ess.iter().map(|e| sigma_pool / e.sqrt()).collect(),
    })
}

/// Pooled standard errors for weighted means of `values`.
pub fn pooled_se(weights: &WeightSet, cohort: &Cohort, values: &[f64]) -> Result<PooledSe, EstimateError> {
    pooled_se_with(weights, cohort, values, VarianceFormula::Normalized)
}

pub fn pooled_se_with(
    weights: &WeightSet,
    cohort: &Cohort,
    values: &[f64],
    formula: VarianceFormula,
) -> Result<PooledSe, EstimateError> {
    check_alignment(weights, cohort, values)?;
    let mut ess = Vec::with_capacity(weights.hospitals.len());
    let mut variances = Vec::with_capacity(weights.hospitals.len());
    for h in &weights.hospitals {
        let rows = &cohort.hospitals()[&h.hospital_id];
        let local: Vec<f64> = rows.iter().map(|&r| values[r]).collect();
        let mu = weighted_sum(&h.gamma, rows, values);
        let var = match formula {
            VarianceFormula::Normalized => hospital_variance(&h.gamma, &local, mu),
            VarianceFormula::Literal => hospital_variance_literal(&h.gamma, &local, mu),
        };
        variances.push(var.ok());
        ess.push(1.0 / h.gamma.iter().map(|g| g * g).sum::<f64>());
    }
    pool_variances(&ess, &variances)
}

/// Linear outcome model with hospital intercepts and pooled slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub beta: Array1<f64>,
    /// Hospital intercepts, keyed by hospital id.
    pub alpha: BTreeMap<String, f64>,
    /// `Y_i - alpha_j - beta . phi(X_i)`, indexed by patient position.
    pub residuals: Vec<f64>,
    /// Basis columns that needed diagonal jitter (collinear with the
    /// intercepts or each other).
    pub jittered_columns: Vec<String>,
}

impl OutcomeModel {
    pub fn predict(&self, hospital_id: &str, phi_row: ndarray::ArrayView1<f64>) -> f64 {
        self.alpha[hospital_id] + self.beta.dot(&phi_row)
    }
}

/// Fits `Y = alpha_j + beta . phi(X) + e` by within-hospital demeaning.
///
/// With `weights`, each patient's squared residual is weighted by its
/// balancing weight; patients of hospitals absent from `weights` are
/// excluded from the fit but still get residuals.
pub fn fit_outcome_model(
    basis: &BasisMatrix,
    cohort: &Cohort,
    outcomes: &[f64],
    weights: Option<&WeightSet>,
) -> Result<OutcomeModel, EstimateError> {
    let n = cohort.n();
    let p = basis.p();
    if outcomes.len() != n || basis.phi.nrows() != n {
        return Err(EstimateError::Alignment(format!(
            "{} outcomes, {} basis rows, {} patients",
            outcomes.len(),
            basis.phi.nrows(),
            n
        )));
    }
    let mut w = vec![1.0; n];
    if let Some(ws) = weights {
        check_alignment(ws, cohort, outcomes)?;
        w.iter_mut().for_each(|x| *x = 0.0);
        for h in &ws.hospitals {
            for (&r, &g) in cohort.hospitals()[&h.hospital_id].iter().zip(&h.gamma) {
                w[r] = g;
            }
        }
    }

    let mut hospital_means: Vec<(Array1<f64>, f64)> = Vec::with_capacity(cohort.num_hospitals());
    let mut fitted_hospitals = 0usize;
    let mut fitted_patients = 0usize;
    for rows in cohort.hospitals().values() {
        let mut total: f64 = rows.iter().map(|&r| w[r]).sum();
        let uniform = total <= 0.0;
        if uniform {
            total = rows.len() as f64;
        } else {
            fitted_hospitals += 1;
            fitted_patients += rows.iter().filter(|&&r| w[r] > 0.0).count();
        }
        let wt = |r: usize| if uniform { 1.0 } else { w[r] };
        let mut xbar = Array1::<f64>::zeros(p);
        let mut ybar = 0.0;
        for &r in rows {
            xbar.scaled_add(wt(r), &basis.phi.row(r));
            ybar += wt(r) * outcomes[r];
        }
        hospital_means.push((xbar / total, ybar / total));
    }
    let dof = fitted_patients.saturating_sub(fitted_hospitals);
    if p >= dof {
        return Err(EstimateError::NotIdentifiable { p, dof });
    }

    let mut gram = Array2::<f64>::zeros((p, p));
    let mut rhs = Array1::<f64>::zeros(p);
    let mut xt = Array1::<f64>::zeros(p);
    for (rows, (xbar, ybar)) in cohort.hospitals().values().zip(&hospital_means) {
        for &r in rows {
            if w[r] <= 0.0 {
                continue;
            }
            xt.assign(&basis.phi.row(r));
            xt -= xbar;
            let yt = outcomes[r] - ybar;
            for a in 0..p {
                let wa = w[r] * xt[a];
                rhs[a] += wa * yt;
                for b in a..p {
                    gram[[a, b]] += wa * xt[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
    }
    let name = |c: &usize| basis.columns[*c].name.clone();
    let solution = solve_spd(&gram, &rhs).map_err(|SingularError { columns }| {
        EstimateError::SingularModel {
            columns: columns.iter().map(name).collect(),
        }
    })?;
    let jittered_columns: Vec<String> = solution.jittered.iter().map(name).collect();
    if !jittered_columns.is_empty() {
        log::warn!("outcome model: jitter applied for collinear columns {jittered_columns:?}");
    }
    let beta = solution.x;

    let mut alpha = BTreeMap::new();
    let mut residuals = vec![0.0; n];
    for ((id, rows), (xbar, ybar)) in cohort.hospitals().iter().zip(&hospital_means) {
        let a = ybar - beta.dot(xbar);
        for &r in rows {
            residuals[r] = outcomes[r] - a - beta.dot(&basis.phi.row(r));
        }
        alpha.insert(id.clone(), a);
    }
    Ok(OutcomeModel {
        beta,
        alpha,
        residuals,
        jittered_columns,
    })
}

/// Weighted basis mean minus target, per hospital.
pub fn imbalances(weights: &WeightSet, basis: &BasisMatrix, cohort: &Cohort) -> Vec<Array1<f64>> {
    let target = basis.target();
    weights
        .hospitals
        .iter()
        .map(|h| {
            let mut m = Array1::<f64>::zeros(basis.p());
            for (&r, &g) in cohort.hospitals()[&h.hospital_id].iter().zip(&h.gamma) {
                m.scaled_add(g, &basis.phi.row(r));
            }
            m - target
        })
        .collect()
}

/// `mu_weighted + beta . (target - sum gamma phi)` per hospital.
pub fn bias_corrected_means(
    weights: &WeightSet,
    basis: &BasisMatrix,
    cohort: &Cohort,
    model: &OutcomeModel,
    mu_weighted: &[f64],
) -> Result<Vec<f64>, EstimateError> {
    if mu_weighted.len() != weights.hospitals.len() || model.beta.len() != basis.p() {
        return Err(EstimateError::Alignment("estimate/model dimensions disagree".into()));
    }
    Ok(imbalances(weights, basis, cohort)
        .iter()
        .zip(mu_weighted)
        .map(|(imb, mu)| mu - model.beta.dot(imb))
        .collect())
}

/// The model-assisted form: the hospital's fitted surface averaged over
/// the target population plus the weighted mean of its residuals.
///
/// Without a target override the population average is taken literally
/// over every patient row, independently of [`bias_corrected_means`].
pub fn model_assisted_means(
    weights: &WeightSet,
    basis: &BasisMatrix,
    cohort: &Cohort,
    model: &OutcomeModel,
) -> Result<Vec<f64>, EstimateError> {
    check_alignment(weights, cohort, &model.residuals)?;
    let n = cohort.n() as f64;
    Ok(weights
        .hospitals
        .iter()
        .map(|h| {
            let id = &h.hospital_id;
            let surface = match &basis.target_override {
                Some(t) => model.alpha[id] + model.beta.dot(t),
                None => basis.phi.outer_iter().map(|row| model.predict(id, row)).sum::<f64>() / n,
            };
            surface + weighted_sum(&h.gamma, &cohort.hospitals()[id], &model.residuals)
        })
        .collect())
}

/// Residual-based pooled standard errors and the within-hospital R^2
/// relative to the weighted-outcome pooled variance.
pub fn bias_corrected_se(
    weights: &WeightSet,
    cohort: &Cohort,
    model: &OutcomeModel,
    weighted_pool: &PooledSe,
) -> Result<(PooledSe, f64), EstimateError> {
    let pooled = pooled_se(weights, cohort, &model.residuals)?;
    let r2 = 1.0 - pooled.sigma2_pool / weighted_pool.sigma2_pool;
    Ok((pooled, r2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HospitalEstimate {
    pub hospital_id: String,
    pub n: usize,
    pub ess: f64,
    pub mu_raw: f64,
    pub se_raw: f64,
    pub mu_weighted: f64,
    pub se_weighted: f64,
    pub mu_bias_corrected: f64,
    pub se_bias_corrected: f64,
    /// Bias-corrected estimate outside [0, 1].
    pub flag_extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub rows: Vec<HospitalEstimate>,
    pub sigma_pool_raw: f64,
    pub sigma_pool_weighted: f64,
    pub sigma_pool_residual: f64,
    pub model_r2: f64,
    pub model: OutcomeModel,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimateOptions {
    pub variance_formula: VarianceFormula,
}

/// Raw, weighted and bias-corrected estimates for every weighted hospital.
pub fn estimate(
    basis: &BasisMatrix,
    cohort: &Cohort,
    weights: &WeightSet,
    options: &EstimateOptions,
) -> Result<EstimateTable, EstimateError> {
    let outcomes = cohort.outcomes();
    let uniform = WeightSet {
        hospitals: weights
            .hospitals
            .iter()
            .map(|h| {
                let n = h.gamma.len();
                crate::solver::HospitalWeights {
                    gamma: vec![1.0 / n as f64; n],
                    ess: n as f64,
                    ..h.clone()
                }
            })
            .collect(),
        failures: Vec::new(),
        config: weights.config,
    };
    let mu_raw = weighted_means(&uniform, cohort, &outcomes)?;
    let raw_pool = pooled_se_with(&uniform, cohort, &outcomes, options.variance_formula)?;
    let mu_weighted = weighted_means(weights, cohort, &outcomes)?;
    let weighted_pool = pooled_se_with(weights, cohort, &outcomes, options.variance_formula)?;

    let model = fit_outcome_model(basis, cohort, &outcomes, None)?;
    let mu_bc = bias_corrected_means(weights, basis, cohort, &model, &mu_weighted)?;
    let (resid_pool, model_r2) = bias_corrected_se(weights, cohort, &model, &weighted_pool)?;

    let rows = weights
        .hospitals
        .iter()
        .enumerate()
        .map(|(k, h)| HospitalEstimate {
            hospital_id: h.hospital_id.clone(),
            n: h.gamma.len(),
            ess: 1.0 / h.gamma.iter().map(|g| g * g).sum::<f64>(),
            mu_raw: mu_raw[k],
            se_raw: raw_pool.se[k],
            mu_weighted: mu_weighted[k],
            se_weighted: weighted_pool.se[k],
            mu_bias_corrected: mu_bc[k],
            se_bias_corrected: resid_pool.se[k],
            flag_extrapolated: !(0.0..=1.0).contains(&mu_bc[k]),
        })
        .collect();
    Ok(EstimateTable {
        rows,
        sigma_pool_raw: raw_pool.sigma_pool,
        sigma_pool_weighted: weighted_pool.sigma_pool,
        sigma_pool_residual: resid_pool.sigma_pool,
        model_r2,
        model,
    })
}
