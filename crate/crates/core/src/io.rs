//! CSV artifacts. Every file starts with a `# riskbal <version> ...`
//! provenance line; floats use 12 significant digits so reruns are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::Cohort;
use crate::diagnostics::{BalanceRow, FrontierPoint, HospitalBias};
use crate::estimator::EstimateTable;
use crate::pooling::{HeterogeneityResult, PosteriorSummary};
use crate::simulator::{Population, Replicate, SimRow};
use crate::solver::{HospitalWeights, SolverConfig, WeightSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("required file {0} not found")]
    Missing(PathBuf),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// `%.{digits}g`-style formatting: shortest of fixed or scientific, with
/// trailing zeros removed.
pub fn format_g(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt(x: f64) -> String {
    format_g(x, SIGNIFICANT_DIGITS)
}

/// Settings echoed in each file's first line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub lambda: f64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("# riskbal {VERSION} seed={} lambda={}", self.seed, fmt(self.lambda))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the provenance line, a header and string rows.
pub fn write_table<I>(path: &Path, provenance: &Provenance, columns: &[&str], rows: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", provenance.line()).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(columns).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_weights(path: &Path, prov: &Provenance, weights: &WeightSet, cohort: &Cohort) -> Result<(), IoError> {
    let patients = cohort.patients();
    let rows = weights.hospitals.iter().flat_map(|h| {
        cohort.hospitals()[&h.hospital_id]
            .iter()
            .zip(&h.gamma)
            .map(|(&pos, &g)| vec![patients[pos].row_index.to_string(), h.hospital_id.clone(), fmt(g)])
            .collect::<Vec<_>>()
    });
    write_table(path, prov, &["row_index", "hospital_id", "weight"], rows)
}

pub fn write_summary(path: &Path, prov: &Provenance, weights: &WeightSet) -> Result<(), IoError> {
    let rows = weights.hospitals.iter().map(|h| {
        vec![
            h.hospital_id.clone(),
            h.gamma.len().to_string(),
            fmt(h.ess),
            fmt(h.imbalance_l2),
            fmt(h.kkt_residual),
            h.iterations.to_string(),
            h.converged.to_string(),
        ]
    });
    write_table(
        path,
        prov,
        &["hospital_id", "n", "ess", "imbalance_l2", "kkt_residual", "iterations", "converged"],
        rows,
    )
}

fn records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>), IoError> {
    if !path.exists() {
        return Err(IoError::Missing(path.to_path_buf()));
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(csv_err(path))?;
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize, IoError> {
    header.iter().position(|h| h == name).ok_or_else(|| IoError::Format {
        path: path.to_path_buf(),
        message: format!("missing column `{name}`"),
    })
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, name: &str, value: &str) -> Result<T, IoError> {
    value.parse().map_err(|_| IoError::Format {
        path: path.to_path_buf(),
        message: format!("data row {line}: cannot parse `{value}` in column `{name}`"),
    })
}

/// Reads weights written by [`write_weights`] back against the same
/// cohort. Hospitals must be complete; ESS is recomputed.
pub fn read_weights(path: &Path, cohort: &Cohort, config: SolverConfig) -> Result<WeightSet, IoError> {
    let (header, rows) = records(path)?;
    let (ci, ch, cw) = (
        column(path, &header, "row_index")?,
        column(path, &header, "hospital_id")?,
        column(path, &header, "weight")?,
    );
    let position: BTreeMap<usize, usize> = cohort
        .patients()
        .iter()
        .enumerate()
        .map(|(pos, p)| (p.row_index, pos))
        .collect();
    let mut gammas: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for (line, rec) in rows.iter().enumerate() {
        let row: usize = parse(path, line, "row_index", &rec[ci])?;
        let w: f64 = parse(path, line, "weight", &rec[cw])?;
        let id = &rec[ch];
        let pos = *position.get(&row).ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            message: format!("row_index {row} is not a retained patient of the cohort"),
        })?;
        if cohort.patients()[pos].hospital_id != id {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                message: format!("row_index {row} belongs to `{}`, not `{id}`", cohort.patients()[pos].hospital_id),
            });
        }
        gammas.entry(id.to_string()).or_default().insert(pos, w);
    }
    let mut hospitals = Vec::with_capacity(gammas.len());
    for (id, by_pos) in gammas {
        let members = &cohort.hospitals()[&id];
        if by_pos.len() != members.len() {
            return Err(IoError::Format {
                path: path.to_path_buf(),
                message: format!("hospital `{id}` has {} weights for {} patients", by_pos.len(), members.len()),
            });
        }
        let gamma: Vec<f64> = members.iter().map(|p| by_pos[p]).collect();
        hospitals.push(HospitalWeights {
            hospital_id: id,
            ess: 1.0 / gamma.iter().map(|g| g * g).sum::<f64>(),
            gamma,
            imbalance: Vec::new(),
            imbalance_l2: f64::NAN,
            kkt_residual: f64::NAN,
            iterations: 0,
            objective: f64::NAN,
            converged: true,
        });
    }
    Ok(WeightSet {
        hospitals,
        failures: Vec::new(),
        config,
    })
}

pub fn write_estimates(path: &Path, prov: &Provenance, table: &EstimateTable) -> Result<(), IoError> {
    let rows = table.rows.iter().map(|r| {
        vec![
            r.hospital_id.clone(),
            r.n.to_string(),
            fmt(r.ess),
            fmt(r.mu_raw),
            fmt(r.mu_weighted),
            fmt(r.se_weighted),
            fmt(r.mu_bias_corrected),
            fmt(r.se_bias_corrected),
            r.flag_extrapolated.to_string(),
            fmt(r.se_raw),
        ]
    });
    write_table(
        path,
        prov,
        &[
            "hospital_id",
            "n",
            "ess",
            "mu_raw",
            "mu_weighted",
            "se_weighted",
            "mu_bias_corrected",
            "se_bias_corrected",
            "flag_extrapolated",
            "se_raw",
        ],
        rows,
    )
}

/// Estimates and standard errors of one hospital, read back for pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub hospital_id: String,
    pub mu_raw: f64,
    pub se_raw: f64,
    pub mu_weighted: f64,
    pub se_weighted: f64,
    pub mu_bias_corrected: f64,
    pub se_bias_corrected: f64,
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRecord>, IoError> {
    let (header, rows) = records(path)?;
    let names = [
        "hospital_id",
        "mu_raw",
        "se_raw",
        "mu_weighted",
        "se_weighted",
        "mu_bias_corrected",
        "se_bias_corrected",
    ];
    let idx: Vec<usize> = names
        .iter()
        .map(|n| column(path, &header, n))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows.iter().enumerate() {
        let num = |k: usize| parse::<f64>(path, line, names[k], &rec[idx[k]]);
        out.push(EstimateRecord {
            hospital_id: rec[idx[0]].to_string(),
            mu_raw: num(1)?,
            se_raw: num(2)?,
            mu_weighted: num(3)?,
            se_weighted: num(4)?,
            mu_bias_corrected: num(5)?,
            se_bias_corrected: num(6)?,
        });
    }
    out.sort_by(|a, b| a.hospital_id.cmp(&b.hospital_id));
    Ok(out)
}

pub fn write_sweep(path: &Path, prov: &Provenance, points: &[FrontierPoint]) -> Result<(), IoError> {
    let rows = points.iter().map(|p| vec![fmt(p.lambda), fmt(p.pbr), fmt(p.avg_ess)]);
    write_table(path, prov, &["lambda", "pbr", "avg_ess"], rows)
}

pub fn write_balance(path: &Path, prov: &Provenance, rows: &[BalanceRow]) -> Result<(), IoError> {
    let rows = rows.iter().map(|r| {
        vec![
            r.hospital_id.clone(),
            r.covariate.clone(),
            fmt(r.smd_raw),
            fmt(r.smd_weighted),
        ]
    });
    write_table(path, prov, &["hospital_id", "covariate", "smd_raw", "smd_weighted"], rows)
}

pub fn write_bias(path: &Path, prov: &Provenance, rows: &[HospitalBias]) -> Result<(), IoError> {
    let rows = rows.iter().map(|r| {
        vec![
            r.hospital_id.clone(),
            fmt(r.delta_raw),
            fmt(r.delta_weighted),
            fmt(r.imbalance_l2_raw),
            fmt(r.imbalance_l2_weighted),
        ]
    });
    write_table(
        path,
        prov,
        &["hospital_id", "delta_raw", "delta_weighted", "imbalance_l2_raw", "imbalance_l2_weighted"],
        rows,
    )
}

pub fn write_heterogeneity(
    path: &Path,
    prov: &Provenance,
    sets: &[(&str, HeterogeneityResult)],
) -> Result<(), IoError> {
    let rows = sets.iter().map(|(name, h)| {
        vec![
            name.to_string(),
            fmt(h.grand_mean),
            fmt(h.tau_hat),
            fmt(h.tau_ci.lo),
            fmt(h.tau_ci.hi),
            h.tau_ci.empty.to_string(),
            fmt(h.q_at_zero),
            fmt(h.prediction_interval_80.0),
            fmt(h.prediction_interval_80.1),
            h.r2_cross.map(fmt).unwrap_or_default(),
        ]
    });
    write_table(
        path,
        prov,
        &[
            "estimate_set",
            "grand_mean",
            "tau_hat",
            "tau_ci_lo",
            "tau_ci_hi",
            "tau_ci_empty",
            "q_at_zero",
            "pi80_lo",
            "pi80_hi",
            "r2_cross",
        ],
        rows,
    )
}

pub fn write_posterior(
    path: &Path,
    prov: &Provenance,
    ids: &[String],
    post: &PosteriorSummary,
) -> Result<(), IoError> {
    let rows = ids.iter().zip(&post.hospitals).map(|(id, h)| {
        vec![
            id.clone(),
            fmt(h.post_mean),
            fmt(h.post_sd),
            fmt(h.ci_lo),
            fmt(h.ci_hi),
            fmt(h.prob_worst_decile),
        ]
    });
    write_table(
        path,
        prov,
        &["hospital_id", "post_mean", "post_sd", "ci_lo_2.5", "ci_hi_97.5", "prob_worst_decile"],
        rows,
    )
}

pub fn write_sim_results(path: &Path, prov: &Provenance, rows: &[SimRow]) -> Result<(), IoError> {
    let rows = rows.iter().map(|r| {
        vec![
            fmt(r.beta_bar),
            fmt(r.sigma_alpha2),
            fmt(r.sigma_beta2),
            r.estimator.name().to_string(),
            fmt(r.avg_bias),
            fmt(r.avg_se),
            fmt(r.avg_rmspe),
            r.reps.to_string(),
            r.clamp_count.to_string(),
        ]
    });
    write_table(
        path,
        prov,
        &[
            "beta_bar",
            "sigma_alpha2",
            "sigma_beta2",
            "estimator",
            "avg_bias",
            "avg_se",
            "avg_rmspe",
            "reps",
            "clamp_count",
        ],
        rows,
    )
}

/// Writes a simulated sample in the cohort input format.
pub fn write_cohort(path: &Path, prov: &Provenance, population: &Population, sample: &Replicate) -> Result<(), IoError> {
    let names = crate::simulator::covariate_names();
    let mut columns = vec![crate::data::HOSPITAL_COLUMN, crate::data::OUTCOME_COLUMN];
    columns.extend(names.iter().map(String::as_str));
    let rows = sample.patients.iter().zip(&sample.outcomes).map(|(&i, &y)| {
        let mut row = vec![
            population.hospitals[population.hospital_of[i]].hospital_id.clone(),
            y.to_string(),
        ];
        row.extend(population.covariates[i].iter().map(|&x| fmt(x)));
        row
    });
    write_table(path, prov, &columns, rows)
}
