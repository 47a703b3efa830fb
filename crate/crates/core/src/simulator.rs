//! Synthetic hospitals with known quality, and the repeated-sampling
//! experiment comparing raw, weighted and bias-corrected estimates.
//!
//! Hospital latents `u_k` are drawn on [-0.5, 0.5]; the intercept, slope,
//! size and covariate formulas use the shifted value `u_k + 0.5` on [0, 1],
//! the scale on which they are centered and positive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{build_basis, BasisConfig, Cohort, DataError, PatientRecord};
use crate::estimator::{estimate, EstimateError, EstimateOptions};
use crate::solver::{solve_all, SolverConfig, SolverError};

/// Covariate coefficients of the patient risk model.
pub const V: [f64; 7] = [0.4, 0.3, 0.4, 0.2, 0.2, 0.2, 0.2];
pub const NUM_COVARIATES: usize = 7;
pub const DEFAULT_SIM_LAMBDA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("replicate {rep}: {source}")]
    Data { rep: usize, source: DataError },
    #[error("replicate {rep}, hospital `{hospital_id}`: {error}")]
    Solver {
        rep: usize,
        hospital_id: String,
        error: SolverError,
    },
    #[error("replicate {rep}: {source}")]
    Estimate { rep: usize, source: EstimateError },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub j: usize,
    pub alpha_bar: f64,
    pub sigma_alpha2: f64,
    pub beta_bar: f64,
    pub sigma_beta2: f64,
    pub reps: usize,
    pub seed: u64,
    /// Weight penalty used by the weighted estimators.
    pub lambda: f64,
    pub mean_hospital_size: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            j: 50,
            alpha_bar: -1.0,
            sigma_alpha2: 0.0,
            beta_bar: 0.0,
            sigma_beta2: 0.0,
            reps: 1000,
            seed: 0,
            lambda: DEFAULT_SIM_LAMBDA,
            mean_hospital_size: 80,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidParams(m));
        if self.j < 2 {
            return bad(format!("J = {} must be at least 2", self.j));
        }
        if !(self.sigma_alpha2 >= 0.0 && self.sigma_beta2 >= 0.0) {
            return bad("variances must be non-negative".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.mean_hospital_size == 0 {
            return bad("mean hospital size must be positive".into());
        }
        if !(self.alpha_bar.is_finite() && self.beta_bar.is_finite() && self.lambda >= 0.0) {
            return bad("alpha_bar, beta_bar must be finite and lambda non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HospitalTruth {
    pub hospital_id: String,
    /// Latents on [-0.5, 0.5].
    pub u: [f64; 3],
    /// Total intercept on the logit scale.
    pub alpha: f64,
    pub beta: f64,
    pub size_share: f64,
    pub size: usize,
    /// Hospital risk function averaged over the whole population.
    pub true_quality: f64,
}

impl HospitalTruth {
    /// Complication probability for a patient with covariates `x` at this
    /// hospital.
    pub fn risk(&self, x: &[f64; NUM_COVARIATES], x_bar: &[f64; NUM_COVARIATES], beta_bar: f64) -> f64 {
        let mut centered = 0.0;
        let mut raw = 0.0;
        for k in 0..NUM_COVARIATES {
            centered += V[k] * (x[k] - x_bar[k]);
            raw += V[k] * x[k];
        }
        logistic(self.alpha + beta_bar * centered + (self.beta - beta_bar) * raw)
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub params: SimParams,
    pub hospitals: Vec<HospitalTruth>,
    pub covariates: Vec<[f64; NUM_COVARIATES]>,
    /// Index into `hospitals` for each patient.
    pub hospital_of: Vec<usize>,
    /// Patient complication probability at their own hospital.
    pub risk: Vec<f64>,
    /// Population covariate mean.
    pub x_bar: [f64; NUM_COVARIATES],
    /// Bernoulli probabilities that had to be clamped into [0, 1].
    pub clamp_count: usize,
    /// Patient positions per hospital.
    pub members: Vec<Vec<usize>>,
}

fn hospital_id(j: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len();
    format!("h{j:0width$}")
}

/// Splits `total` proportionally to `shares` by largest remainder; ties go
/// to the lower index.
fn allocate(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let left = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(left) {
        sizes[i] += 1;
    }
    sizes
}

fn bernoulli_clamped(rng: &mut ChaCha8Rng, p: f64, clamps: &mut usize) -> f64 {
    let q = if (0.0..=1.0).contains(&p) {
        p
    } else {
        *clamps += 1;
        p.clamp(0.0, 1.0)
    };
    f64::from(u8::from(Bernoulli::new(q).expect("probability in [0, 1]").sample(rng)))
}

/// Draws the fixed population: hospital latents, sizes and covariates.
pub fn gen_population(params: &SimParams) -> Result<Population, SimError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(0);
    let j = params.j;
    let (sa, sb) = (params.sigma_alpha2.sqrt(), params.sigma_beta2.sqrt());

    let latents: Vec<[f64; 3]> = (0..j)
        .map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
        .collect();
    let shifted = |u: &[f64; 3]| [u[0] + 0.5, u[1] + 0.5, u[2] + 0.5];
    let shares: Vec<f64> = latents.iter().map(|u| shifted(u)[0] + 0.3).collect();
    let sizes = allocate(params.mean_hospital_size * j, &shares);

    let mut clamp_count = 0;
    let mut covariates = Vec::with_capacity(params.mean_hospital_size * j);
    let mut hospital_of = Vec::with_capacity(covariates.capacity());
    let mut members = Vec::with_capacity(j);
    let mut hospitals = Vec::with_capacity(j);
    for (h, (u, &size)) in latents.iter().zip(&sizes).enumerate() {
        let s = shifted(u);
        let rate = 1.0 + 1.5 * -(1.0 - s[0]).ln();
        let poisson = Poisson::new(rate).expect("positive finite rate");
        let p2 = (s[1] + s[2] + 0.5) / 3.0;
        let p3 = (s[0] + s[1] + s[2]) / 3.0;
        let mut rows = Vec::with_capacity(size);
        for _ in 0..size {
            let mut x = [0.0; NUM_COVARIATES];
            x[0] = poisson.sample(&mut rng);
            x[1] = bernoulli_clamped(&mut rng, p2, &mut clamp_count);
            x[2] = bernoulli_clamped(&mut rng, p3, &mut clamp_count);
            for v in x.iter_mut().skip(3) {
                *v = bernoulli_clamped(&mut rng, 0.5, &mut clamp_count);
            }
            rows.push(covariates.len());
            covariates.push(x);
            hospital_of.push(h);
        }
        members.push(rows);
        hospitals.push(HospitalTruth {
            hospital_id: hospital_id(h, j),
            u: *u,
            alpha: params.alpha_bar + sa * 4.0 * (s[0] + s[1] + s[2] - 1.5),
            beta: params.beta_bar + sb * 6.0 * (s[0] + s[1] - 1.0),
            size_share: shares[h] / shares.iter().sum::<f64>(),
            size,
            true_quality: f64::NAN,
        });
    }

    let n = covariates.len() as f64;
    let mut x_bar = [0.0; NUM_COVARIATES];
    for x in &covariates {
        for k in 0..NUM_COVARIATES {
            x_bar[k] += x[k] / n;
        }
    }
    for hosp in hospitals.iter_mut() {
        hosp.true_quality = covariates
            .iter()
            .map(|x| hosp.risk(x, &x_bar, params.beta_bar))
            .sum::<f64>()
            / n;
    }
    let risk = covariates
        .iter()
        .zip(&hospital_of)
        .map(|(x, &h)| hospitals[h].risk(x, &x_bar, params.beta_bar))
        .collect();
    Ok(Population {
        params: *params,
        hospitals,
        covariates,
        hospital_of,
        risk,
        x_bar,
        clamp_count,
        members,
    })
}

/// A bootstrap draw: population patient positions and fresh outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub patients: Vec<usize>,
    pub outcomes: Vec<u8>,
}

pub fn covariate_names() -> Vec<String> {
    (1..=NUM_COVARIATES).map(|k| format!("x{k}")).collect()
}

impl Population {
    /// The population itself with one draw of outcomes.
    pub fn observed(&self, seed: u64) -> Replicate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patients: Vec<usize> = (0..self.covariates.len()).collect();
        let outcomes = patients.iter().map(|&i| u8::from(rng.random::<f64>() < self.risk[i])).collect();
        Replicate { patients, outcomes }
    }

    /// Converts a replicate to a cohort; row indices follow replicate order.
    pub fn to_cohort(&self, rep: &Replicate) -> Result<Cohort, DataError> {
        let records = rep
            .patients
            .iter()
            .zip(&rep.outcomes)
            .enumerate()
            .map(|(row, (&i, &y))| PatientRecord {
                row_index: row,
                hospital_id: self.hospitals[self.hospital_of[i]].hospital_id.clone(),
                outcome: y,
                covariates: self.covariates[i].to_vec(),
            })
            .collect();
        Cohort::from_records(covariate_names(), records, 1)
    }
}

/// Within-hospital resampling with replacement at the population sizes,
/// with outcomes redrawn from each patient's risk.
pub fn resample(population: &Population, rng: &mut ChaCha8Rng) -> Replicate {
    let mut patients = Vec::with_capacity(population.covariates.len());
    for rows in &population.members {
        for _ in 0..rows.len() {
            patients.push(rows[rng.random_range(0..rows.len())]);
        }
    }
    let outcomes = patients
        .iter()
        .map(|&i| u8::from(rng.random::<f64>() < population.risk[i]))
        .collect();
    Replicate { patients, outcomes }
}

/// Generator for replicate `rep`; stream 0 is reserved for the population.
pub fn replicate_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64 + 1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Raw,
    Weighted,
    WeightedRegression,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Raw, Estimator::Weighted, Estimator::WeightedRegression];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Raw => "raw",
            Estimator::Weighted => "weighted",
            Estimator::WeightedRegression => "weighted_regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    /// Mean over hospitals of |mean over reps of (estimate - truth)|.
    pub avg_bias: f64,
    /// Mean over hospitals of the signed bias.
    pub mean_signed_bias: f64,
    /// Mean over hospitals of the sd over reps.
    pub avg_se: f64,
    /// Mean over hospitals of the root mean squared error over reps.
    pub avg_rmspe: f64,
    pub bias: Vec<f64>,
    pub se: Vec<f64>,
    pub rmspe: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub params: SimParams,
    pub estimators: Vec<EstimatorSummary>,
    pub clamp_count: usize,
    /// Replicates with at least one hospital whose solve hit the iteration cap.
    pub nonconverged_reps: usize,
    pub true_quality: Vec<f64>,
}

impl SimResult {
    pub fn get(&self, e: Estimator) -> &EstimatorSummary {
        self.estimators.iter().find(|s| s.estimator == e).expect("every estimator is summarized")
    }
}

struct RepEstimates {
    values: [Vec<f64>; 3],
    converged: bool,
}

fn run_rep(population: &Population, rep: usize, solver: &SolverConfig) -> Result<RepEstimates, SimError> {
    let mut rng = replicate_rng(population.params.seed, rep);
    let sample = resample(population, &mut rng);
    let cohort = population.to_cohort(&sample).map_err(|source| SimError::Data { rep, source })?;
    let basis = build_basis(&cohort, &BasisConfig::default()).map_err(|source| SimError::Data { rep, source })?;
    let weights = solve_all(&basis, &cohort, solver);
    if let Some(f) = weights.failures.first() {
        return Err(SimError::Solver {
            rep,
            hospital_id: f.hospital_id.clone(),
            error: f.error.clone(),
        });
    }
    let table = estimate(&basis, &cohort, &weights, &EstimateOptions::default())
        .map_err(|source| SimError::Estimate { rep, source })?;
    let pick = |f: fn(&crate::estimator::HospitalEstimate) -> f64| table.rows.iter().map(f).collect();
    Ok(RepEstimates {
        values: [
            pick(|r| r.mu_raw),
            pick(|r| r.mu_weighted),
            pick(|r| r.mu_bias_corrected),
        ],
        converged: weights.all_converged(),
    })
}

fn summarize(estimator: Estimator, per_rep: &[&Vec<f64>], truth: &[f64]) -> EstimatorSummary {
    let reps = per_rep.len() as f64;
    let j = truth.len();
    let mut bias = vec![0.0; j];
    let mut se = vec![0.0; j];
    let mut rmspe = vec![0.0; j];
    for h in 0..j {
        let vals: Vec<f64> = per_rep.iter().map(|v| v[h]).collect();
        let mean = vals.iter().sum::<f64>() / reps;
        bias[h] = mean - truth[h];
        se[h] = if per_rep.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0)).sqrt()
        } else {
            0.0
        };
        rmspe[h] = (vals.iter().map(|v| (v - truth[h]).powi(2)).sum::<f64>() / reps).sqrt();
    }
    let avg = |x: &[f64]| x.iter().sum::<f64>() / j as f64;
    EstimatorSummary {
        estimator,
        avg_bias: bias.iter().map(|b| b.abs()).sum::<f64>() / j as f64,
        mean_signed_bias: avg(&bias),
        avg_se: avg(&se),
        avg_rmspe: avg(&rmspe),
        bias,
        se,
        rmspe,
    }
}

/// Generates the population, then runs `params.reps` replicates in
/// parallel and compares each estimator with the true hospital quality.
pub fn run_experiment(params: &SimParams) -> Result<SimResult, SimError> {
    let population = gen_population(params)?;
    run_on_population(&population)
}

pub fn run_on_population(population: &Population) -> Result<SimResult, SimError> {
    let params = population.params;
    let solver = SolverConfig::default().with_lambda(params.lambda);
    solver.validate().map_err(|e| SimError::InvalidParams(e.to_string()))?;
    let reps: Vec<RepEstimates> = (0..params.reps)
        .into_par_iter()
        .map(|rep| run_rep(population, rep, &solver))
        .collect::<Result<_, _>>()?;
    let truth: Vec<f64> = population.hospitals.iter().map(|h| h.true_quality).collect();
    let estimators = Estimator::ALL
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let per_rep: Vec<&Vec<f64>> = reps.iter().map(|r| &r.values[k]).collect();
            summarize(e, &per_rep, &truth)
        })
        .collect();
    Ok(SimResult {
        params,
        estimators,
        clamp_count: population.clamp_count,
        nonconverged_reps: reps.iter().filter(|r| !r.converged).count(),
        true_quality: truth,
    })
}

/// One output row per (cell, estimator).
#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub beta_bar: f64,
    pub sigma_alpha2: f64,
    pub sigma_beta2: f64,
    pub estimator: Estimator,
    pub avg_bias: f64,
    pub avg_se: f64,
    pub avg_rmspe: f64,
    pub reps: usize,
    pub clamp_count: usize,
}

/// Runs every (beta_bar, sigma_alpha2, sigma_beta2) cell with the other
/// settings from `base`.
pub fn run_grid(
    base: &SimParams,
    beta_bars: &[f64],
    sigma_cells: &[(f64, f64)],
) -> Result<Vec<SimRow>, SimError> {
    let mut rows = Vec::new();
    for &(sigma_alpha2, sigma_beta2) in sigma_cells {
        for &beta_bar in beta_bars {
            let params = SimParams {
                beta_bar,
                sigma_alpha2,
                sigma_beta2,
                ..*base
            };
            let result = run_experiment(&params)?;
            for s in &result.estimators {
                rows.push(SimRow {
                    beta_bar,
                    sigma_alpha2,
                    sigma_beta2,
                    estimator: s.estimator,
                    avg_bias: s.avg_bias,
                    avg_se: s.avg_se,
                    avg_rmspe: s.avg_rmspe,
                    reps: params.reps,
                    clamp_count: result.clamp_count,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(j: usize) -> SimParams {
        SimParams {
            j,
            reps: 20,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn homogeneous_hospitals_share_the_base_rate() {
        let pop = gen_population(&params(10)).unwrap();
        let p = logistic(-1.0);
        assert!((p - 0.26894142137).abs() < 1e-10);
        assert!(pop.risk.iter().all(|r| (r - p).abs() < 1e-15));
        assert!(pop.hospitals.iter().all(|h| (h.true_quality - p).abs() < 1e-13));
    }

    #[test]
    fn sizes_follow_shares() {
        let pop = gen_population(&params(10)).unwrap();
        assert_eq!(pop.covariates.len(), 800);
        let total: usize = pop.hospitals.iter().map(|h| h.size).sum();
        assert_eq!(total, 800);
        for h in &pop.hospitals {
            assert!(h.size_share > 0.0);
            assert!((h.size as f64 - 800.0 * h.size_share).abs() <= 1.0);
            let s = h.u[0] + 0.5 + 0.3;
            assert!(s > 0.0);
        }
        assert_eq!(pop.clamp_count, 0);
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
    }

    #[test]
    fn latents_drive_parameters() {
        let p = SimParams {
            sigma_alpha2: 1.0,
            sigma_beta2: 1.0,
            beta_bar: 2.0,
            ..params(40)
        };
        let pop = gen_population(&p).unwrap();
        for h in &pop.hospitals {
            assert!(h.u.iter().all(|u| (-0.5..=0.5).contains(u)));
            let s: f64 = h.u.iter().map(|u| u + 0.5).sum();
            assert!((h.alpha - (-1.0 + 4.0 * (s - 1.5))).abs() < 1e-12);
            assert!((h.beta - (2.0 + 6.0 * (h.u[0] + h.u[1] + 1.0 - 1.0))).abs() < 1e-12);
        }
        // larger u0 means a larger Poisson rate for X1
        let mut by_u0: Vec<(f64, f64)> = pop
            .hospitals
            .iter()
            .zip(&pop.members)
            .map(|(h, rows)| (h.u[0], rows.iter().map(|&r| pop.covariates[r][0]).sum::<f64>() / rows.len() as f64))
            .collect();
        by_u0.sort_by(|a, b| a.0.total_cmp(&b.0));
        let low: f64 = by_u0[..10].iter().map(|x| x.1).sum();
        let high: f64 = by_u0[30..].iter().map(|x| x.1).sum();
        assert!(high > low);
    }

    #[test]
    fn resampling_is_deterministic_and_unbiased() {
        let pop = gen_population(&params(5)).unwrap();
        let a = resample(&pop, &mut replicate_rng(3, 0));
        let b = resample(&pop, &mut replicate_rng(3, 0));
        let c = resample(&pop, &mut replicate_rng(3, 1));
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (h, rows) in pop.members.iter().enumerate() {
            assert_eq!(a.patients.iter().filter(|&&i| pop.hospital_of[i] == h).count(), rows.len());
        }
        // covariate means over many replicates match each hospital's mean
        let reps = 1000;
        let mut sums = vec![0.0; pop.members.len()];
        for r in 0..reps {
            let s = resample(&pop, &mut replicate_rng(9, r));
            for &i in &s.patients {
                sums[pop.hospital_of[i]] += pop.covariates[i][0];
            }
        }
        for (h, rows) in pop.members.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|&r| pop.covariates[r][0]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            let got = sums[h] / (reps * rows.len()) as f64;
            let mc = sd / ((reps * rows.len()) as f64).sqrt();
            assert!((got - m).abs() < 4.0 * mc + 1e-12, "hospital {h}: {got} vs {m}");
        }
    }

    #[test]
    fn single_patient_hospital_repeats_itself() {
        let mut pop = gen_population(&params(2)).unwrap();
        let keep = pop.members[0][0];
        pop.members[0] = vec![keep];
        let s = resample(&pop, &mut replicate_rng(1, 0));
        assert_eq!(s.patients[0], keep);
    }

    #[test]
    fn null_model_estimators_are_unbiased() {
        let p = SimParams {
            reps: 200,
            ..params(10)
        };
        let res = run_experiment(&p).unwrap();
        for s in &res.estimators {
            // mean signed bias across hospitals and its Monte Carlo error
            let mc = s.se.iter().map(|x| x * x).sum::<f64>().sqrt() / s.se.len() as f64 / (p.reps as f64).sqrt();
            assert!(s.mean_signed_bias.abs() < 3.0 * mc, "{:?}: {} vs {mc}", s.estimator, s.mean_signed_bias);
        }
        assert_eq!(res.nonconverged_reps, 0);
    }

    #[test]
    fn experiment_is_deterministic() {
        let p = params(6);
        assert_eq!(run_experiment(&p).unwrap(), run_experiment(&p).unwrap());
    }

    #[test]
    fn invalid_params() {
        assert!(gen_population(&params(1)).is_err());
        let p = SimParams {
            sigma_alpha2: -1.0,
            ..params(3)
        };
        assert!(matches!(gen_population(&p), Err(SimError::InvalidParams(_))));
    }
}
