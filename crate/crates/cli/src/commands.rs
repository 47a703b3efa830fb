use std::fmt;
use std::path::{Path, PathBuf};

use log::{info, warn};
use riskbal::data::DataError;
use riskbal::diagnostics::{balance_table, bias_report, lambda_sweep, variable_importance, DiagnosticsError};
use riskbal::estimator::{estimate as estimate_table, EstimateError, EstimateOptions};
use riskbal::io::{self, EstimateRecord, IoError, Provenance};
use riskbal::pooling::{cross_hospital_r2, gibbs_shrinkage, heterogeneity, GibbsConfig, PoolingError};
use riskbal::simulator::{gen_population, run_grid, SimError, SimParams};
use riskbal::{build_basis, load_cohort, solve_all, BasisConfig, BasisMatrix, Cohort, SolverConfig, SolverError};

use crate::config::{EstimateSet, RunConfig};

pub const WEIGHTS_FILE: &str = "weights.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    NonConvergence(String),
    Missing(PathBuf),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::NonConvergence(m) => write!(f, "did not converge: {m}"),
            CliError::Missing(p) => write!(f, "missing required file {}", p.display()),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Missing(p) => CliError::Missing(p),
            IoError::Format { .. } | IoError::Csv { .. } => CliError::Validation(e.to_string()),
            IoError::Io { .. } => CliError::Other(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PoolingError> for CliError {
    fn from(e: PoolingError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidParams(_) => CliError::Validation(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

fn provenance(config: &RunConfig) -> Provenance {
    Provenance {
        seed: config.seed,
        lambda: config.lambda,
    }
}

fn solver_config(config: &RunConfig) -> Result<SolverConfig, CliError> {
    let cfg = SolverConfig {
        lambda: config.lambda,
        lower: config.lower,
        upper: config.upper,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(config: &RunConfig) -> Result<(Cohort, BasisMatrix), CliError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Validation("no input cohort given (--input or `input =`)".into()))?;
    let cohort = load_cohort(input, config.min_hospital_size)?;
    for (id, n) in cohort.dropped_hospitals() {
        warn!("dropped hospital `{id}` with {n} patients");
    }
    let mut basis = build_basis(
        &cohort,
        &BasisConfig {
            rare_threshold: config.rare_threshold,
            comorbidity_columns: config.comorbidity_columns.clone(),
        },
    )?;
    if let Some(target) = &config.target {
        let means = riskbal::data::load_target_means(target)?;
        basis.set_target_from_raw(&cohort, &means)?;
    }
    info!(
        "{} patients, {} hospitals, {} basis columns",
        cohort.n(),
        cohort.num_hospitals(),
        basis.p()
    );
    Ok((cohort, basis))
}

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    config.out.join(name)
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

pub fn weights(config: &RunConfig) -> Result<(), CliError> {
    let solver = solver_config(config)?;
    let (cohort, basis) = load(config)?;
    let ws = solve_all(&basis, &cohort, &solver);
    if let Some(f) = ws.failures.first() {
        return Err(CliError::Validation(format!("hospital `{}`: {}", f.hospital_id, f.error)));
    }
    let prov = provenance(config);
    io::write_weights(&out_path(config, WEIGHTS_FILE), &prov, &ws, &cohort)?;
    io::write_summary(&out_path(config, SUMMARY_FILE), &prov, &ws)?;
    let stalled: Vec<&str> = ws
        .hospitals
        .iter()
        .filter(|h| !h.converged)
        .map(|h| h.hospital_id.as_str())
        .collect();
    if !stalled.is_empty() {
        return Err(CliError::NonConvergence(format!("weights for {}", stalled.join(", "))));
    }
    info!("average effective sample size {:.2}", ws.avg_ess());
    Ok(())
}

fn read_weights(config: &RunConfig, cohort: &Cohort) -> Result<riskbal::WeightSet, CliError> {
    Ok(io::read_weights(&out_path(config, WEIGHTS_FILE), cohort, solver_config(config)?)?)
}

pub fn estimate(config: &RunConfig) -> Result<(), CliError> {
    require(&out_path(config, WEIGHTS_FILE))?;
    let (cohort, basis) = load(config)?;
    let ws = read_weights(config, &cohort)?;
    let table = estimate_table(&basis, &cohort, &ws, &EstimateOptions::default())?;
    io::write_estimates(&out_path(config, ESTIMATES_FILE), &provenance(config), &table)?;
    info!("outcome model R^2 {:.4}", table.model_r2);
    Ok(())
}

pub fn diagnose(config: &RunConfig) -> Result<(), CliError> {
    require(&out_path(config, WEIGHTS_FILE))?;
    let (cohort, basis) = load(config)?;
    let ws = read_weights(config, &cohort)?;
    let report = bias_report(&basis, &cohort, &ws, &cohort.outcomes())?;
    let prov = provenance(config);
    io::write_bias(&out_path(config, "bias.csv"), &prov, &report.hospitals)?;
    io::write_balance(&out_path(config, "balance.csv"), &prov, &balance_table(&basis, &cohort, &ws))?;
    println!("pbr={} avg_ess={}", io::fmt(report.pbr), io::fmt(report.avg_ess));
    Ok(())
}

pub fn sweep(config: &RunConfig) -> Result<(), CliError> {
    let solver = solver_config(config)?;
    let (cohort, basis) = load(config)?;
    let eta = variable_importance(&basis, &cohort.outcomes())?;
    let points = lambda_sweep(&basis, &cohort, &eta, &config.lambda_grid, &solver)?;
    io::write_sweep(&out_path(config, "sweep.csv"), &provenance(config), &points)?;
    let stalled: Vec<String> = points
        .iter()
        .filter(|p| !p.all_converged)
        .map(|p| io::fmt(p.lambda))
        .collect();
    if !stalled.is_empty() {
        return Err(CliError::NonConvergence(format!("weights at lambda {}", stalled.join(", "))));
    }
    Ok(())
}

fn read_estimates(config: &RunConfig) -> Result<Vec<EstimateRecord>, CliError> {
    let path = out_path(config, ESTIMATES_FILE);
    require(&path)?;
    Ok(io::read_estimates(&path)?)
}

fn columns(records: &[EstimateRecord], set: EstimateSet) -> (Vec<f64>, Vec<f64>) {
    records
        .iter()
        .map(|r| match set {
            EstimateSet::Raw => (r.mu_raw, r.se_raw),
            EstimateSet::Weighted => (r.mu_weighted, r.se_weighted),
            EstimateSet::BiasCorrected => (r.mu_bias_corrected, r.se_bias_corrected),
        })
        .unzip()
}

pub fn pool(config: &RunConfig) -> Result<(), CliError> {
    let records = read_estimates(config)?;
    let mut sets = Vec::new();
    let mut tau_raw = None;
    for set in [EstimateSet::Raw, EstimateSet::Weighted, EstimateSet::BiasCorrected] {
        let (mu, se) = columns(&records, set);
        let mut h = heterogeneity(&mu, &se, config.level)?;
        match tau_raw {
            None => tau_raw = Some(h.tau_hat),
            Some(t) => h.r2_cross = cross_hospital_r2(t, h.tau_hat).ok(),
        }
        sets.push((set.name(), h));
    }
    io::write_heterogeneity(&out_path(config, "heterogeneity.csv"), &provenance(config), &sets)?;
    Ok(())
}

pub fn shrink(config: &RunConfig) -> Result<(), CliError> {
    let records = read_estimates(config)?;
    let (mu, se) = columns(&records, config.shrink_estimate);
    let gibbs = GibbsConfig {
        iters: config.gibbs_iters,
        burn_in: config.gibbs_burn_in,
        chains: config.gibbs_chains,
        seed: config.seed,
        ..GibbsConfig::default()
    };
    let post = gibbs_shrinkage(&mu, &se, &gibbs)?;
    let ids: Vec<String> = records.iter().map(|r| r.hospital_id.clone()).collect();
    io::write_posterior(&out_path(config, "posterior.csv"), &provenance(config), &ids, &post)?;
    if !post.converged {
        return Err(CliError::NonConvergence(format!(
            "max split R-hat {:.4} exceeds {}",
            post.max_rhat, gibbs.rhat_threshold
        )));
    }
    Ok(())
}

pub fn simulate(config: &RunConfig) -> Result<(), CliError> {
    let (sigma_alpha2, sigma_beta2) = *config
        .sim_sigma_cells
        .first()
        .ok_or_else(|| CliError::Validation("sim_sigma_cells is empty".into()))?;
    let beta_bar = *config
        .sim_beta_bars
        .first()
        .ok_or_else(|| CliError::Validation("sim_beta_bars is empty".into()))?;
    let base = SimParams {
        j: config.sim_hospitals,
        reps: config.sim_reps,
        seed: config.seed,
        lambda: config.lambda,
        beta_bar,
        sigma_alpha2,
        sigma_beta2,
        ..SimParams::default()
    };
    let prov = provenance(config);
    let population = gen_population(&base)?;
    let sample = population.observed(config.seed);
    io::write_cohort(&out_path(config, "cohort.csv"), &prov, &population, &sample)?;
    let rows = run_grid(&base, &config.sim_beta_bars, &config.sim_sigma_cells)?;
    io::write_sim_results(&out_path(config, "sim_results.csv"), &prov, &rows)?;
    Ok(())
}
