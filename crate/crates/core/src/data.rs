//! Cohort ingestion and the standardized covariate basis.
//!
//! A cohort file is a CSV with a header row containing `hospital_id`,
//! `outcome` and any number of numeric covariate columns. Rows keep their
//! file order; hospitals are indexed lexicographically by id.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2};
use thiserror::Error;

pub const HOSPITAL_COLUMN: &str = "hospital_id";
pub const OUTCOME_COLUMN: &str = "outcome";
/// Name of the appended comorbidity-count column.
pub const COMORBIDITY_COUNT_COLUMN: &str = "comorbidity_count";

pub const DEFAULT_MIN_HOSPITAL_SIZE: usize = 30;
pub const DEFAULT_RARE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: missing required column `{column}`")]
    MissingColumn { column: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a finite number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("domain error at row {row}: outcome `{value}` is not 0 or 1")]
    OutcomeDomain { row: usize, value: String },
    #[error("cohort is empty after dropping hospitals smaller than {min_size}")]
    EmptyCohort { min_size: usize },
    #[error("degenerate column `{column}`: zero variance")]
    DegenerateColumn { column: String },
    #[error("comorbidity column `{column}` is not binary")]
    NonBinaryComorbidity { column: String },
    #[error("unknown column `{column}`")]
    UnknownColumn { column: String },
    #[error("unknown hospital `{0}`")]
    UnknownHospital(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One patient row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    /// Zero-based data-row position in the source file.
    pub row_index: usize,
    pub hospital_id: String,
    pub outcome: u8,
    /// Raw covariates, ordered as [`Cohort::covariate_names`].
    pub covariates: Vec<f64>,
}

/// Patients nested in hospitals.
#[derive(Debug, Clone)]
pub struct Cohort {
    covariate_names: Vec<String>,
    patients: Vec<PatientRecord>,
    /// hospital_id -> positions into `patients`, in file order.
    hospitals: BTreeMap<String, Vec<usize>>,
    dropped: Vec<(String, usize)>,
}

impl Cohort {
    /// Builds a cohort from records, dropping hospitals with fewer than
    /// `min_hospital_size` patients.
    pub fn from_records(
        covariate_names: Vec<String>,
        records: Vec<PatientRecord>,
        min_hospital_size: usize,
    ) -> Result<Self, DataError> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_rows = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if r.covariates.len() != covariate_names.len() {
                return Err(DataError::Schema(format!(
                    "row {} has {} covariates, expected {}",
                    r.row_index,
                    r.covariates.len(),
                    covariate_names.len()
                )));
            }
            if r.outcome > 1 {
                return Err(DataError::OutcomeDomain {
                    row: r.row_index,
                    value: r.outcome.to_string(),
                });
            }
            if !seen_rows.insert(r.row_index) {
                return Err(DataError::Schema(format!("duplicate row_index {}", r.row_index)));
            }
            *counts.entry(r.hospital_id.as_str()).or_default() += 1;
        }

        let mut dropped: Vec<(String, usize)> = counts
            .iter()
            .filter(|(_, &c)| c < min_hospital_size)
            .map(|(h, &c)| (h.to_string(), c))
            .collect();
        dropped.sort();
        for (h, c) in &dropped {
            warn!("dropping hospital `{h}` with {c} patients (< {min_hospital_size})");
        }
        let dropped_ids: std::collections::HashSet<&str> =
            dropped.iter().map(|(h, _)| h.as_str()).collect();

        let patients: Vec<PatientRecord> = records
            .into_iter()
            .filter(|r| !dropped_ids.contains(r.hospital_id.as_str()))
            .collect();
        if patients.is_empty() {
            return Err(DataError::EmptyCohort {
                min_size: min_hospital_size,
            });
        }
        let mut hospitals: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, r) in patients.iter().enumerate() {
            hospitals.entry(r.hospital_id.clone()).or_default().push(pos);
        }
        Ok(Self {
            covariate_names,
            patients,
            hospitals,
            dropped,
        })
    }

    pub fn from_reader<R: Read>(reader: R, min_hospital_size: usize) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn {
                    column: name.to_string(),
                })
        };
        let hosp_col = find(HOSPITAL_COLUMN)?;
        let out_col = find(OUTCOME_COLUMN)?;
        let cov_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != hosp_col && c != out_col)
            .collect();
        let covariate_names: Vec<String> =
            cov_cols.iter().map(|&c| headers[c].to_string()).collect();

        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let outcome_raw = &rec[out_col];
            let outcome = match outcome_raw.parse::<f64>() {
                Ok(0.0) => 0,
                Ok(1.0) => 1,
                Ok(_) => {
                    return Err(DataError::OutcomeDomain {
                        row,
                        value: outcome_raw.to_string(),
                    })
                }
                Err(_) => {
                    return Err(DataError::Parse {
                        row,
                        column: OUTCOME_COLUMN.to_string(),
                        value: outcome_raw.to_string(),
                    })
                }
            };
            let mut covariates = Vec::with_capacity(cov_cols.len());
            for (k, &c) in cov_cols.iter().enumerate() {
                let cell = &rec[c];
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => covariates.push(v),
                    _ => {
                        return Err(DataError::Parse {
                            row,
                            column: covariate_names[k].clone(),
                            value: cell.to_string(),
                        })
                    }
                }
            }
            records.push(PatientRecord {
                row_index: row,
                hospital_id: rec[hosp_col].to_string(),
                outcome,
                covariates,
            });
        }
        Self::from_records(covariate_names, records, min_hospital_size)
    }

    pub fn n(&self) -> usize {
        self.patients.len()
    }

    pub fn num_hospitals(&self) -> usize {
        self.hospitals.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    /// Hospital ids in lexicographic order with their patient positions.
    pub fn hospitals(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.hospitals
    }

    pub fn hospital_rows(&self, hospital_id: &str) -> Result<&[usize], DataError> {
        self.hospitals
            .get(hospital_id)
            .map(Vec::as_slice)
            .ok_or_else(|| DataError::UnknownHospital(hospital_id.to_string()))
    }

    /// Hospitals removed for being below the minimum size, with their counts.
    pub fn dropped_hospitals(&self) -> &[(String, usize)] {
        &self.dropped
    }

    /// Outcomes as reals, indexed by patient position.
    pub fn outcomes(&self) -> Vec<f64> {
        self.patients.iter().map(|p| f64::from(p.outcome)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }
}

/// Reads a cohort CSV.
pub fn load_cohort(path: impl AsRef<Path>, min_hospital_size: usize) -> Result<Cohort, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Cohort::from_reader(std::io::BufReader::new(file), min_hospital_size)
}

/// Reads a single-row CSV of raw-scale covariate means.
pub fn load_target_means(path: impl AsRef<Path>) -> Result<HashMap<String, f64>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers()?.clone();
    let mut rows = rdr.records();
    let rec = match rows.next() {
        Some(r) => r?,
        None => return Err(DataError::Schema("target file has no data row".into())),
    };
    if rows.next().is_some() {
        return Err(DataError::Schema("target file must have exactly one data row".into()));
    }
    let mut out = HashMap::new();
    for (name, cell) in headers.iter().zip(rec.iter()) {
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                out.insert(name.to_string(), v);
            }
            _ => {
                return Err(DataError::Parse {
                    row: 0,
                    column: name.to_string(),
                    value: cell.to_string(),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Binary,
    Continuous,
    Derived,
}

/// How one basis column is computed from raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub center: f64,
    pub scale: f64,
    /// Raw covariate indices summed to produce this column (one entry for
    /// ordinary columns, several for the comorbidity count).
    pub sources: Vec<usize>,
}

impl ColumnSpec {
    fn raw_value(&self, covariates: &[f64]) -> f64 {
        self.sources.iter().map(|&s| covariates[s]).sum()
    }

    pub fn standardize(&self, raw: f64) -> f64 {
        (raw - self.center) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    pub rare_threshold: f64,
    /// Binary columns whose row sum is appended as a derived count column.
    pub comorbidity_columns: Option<Vec<String>>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            comorbidity_columns: None,
        }
    }
}

/// Standardized basis `phi(X)` for every retained patient.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    /// n x p, rows aligned with [`Cohort::patients`].
    pub phi: Array2<f64>,
    pub columns: Vec<ColumnSpec>,
    /// Column means of `phi` over all rows.
    pub phi_bar: Array1<f64>,
    pub target_override: Option<Array1<f64>>,
    /// Constant binary columns removed during construction.
    pub dropped_columns: Vec<String>,
}

impl BasisMatrix {
    pub fn p(&self) -> usize {
        self.phi.ncols()
    }

    /// The balance target: the override when present, else the population mean.
    pub fn target(&self) -> &Array1<f64> {
        self.target_override.as_ref().unwrap_or(&self.phi_bar)
    }

    /// Sets the target from raw-scale covariate means, passing them through
    /// the same centering and scaling as the basis. Derived columns take the
    /// sum of their sources' means.
    pub fn set_target_from_raw(
        &mut self,
        cohort: &Cohort,
        raw_means: &HashMap<String, f64>,
    ) -> Result<(), DataError> {
        let names = cohort.covariate_names();
        let mut target = Array1::zeros(self.columns.len());
        for (k, spec) in self.columns.iter().enumerate() {
            let mut raw = 0.0;
            for &s in &spec.sources {
                raw += *raw_means
                    .get(&names[s])
                    .ok_or_else(|| DataError::MissingColumn {
                        column: names[s].clone(),
                    })?;
            }
            target[k] = spec.standardize(raw);
        }
        self.target_override = Some(target);
        Ok(())
    }

    /// Rows of `phi` for the given patient positions.
    pub fn rows(&self, positions: &[usize]) -> Array2<f64> {
        self.phi.select(ndarray::Axis(0), positions)
    }
}

fn is_binary(values: impl Iterator<Item = f64>) -> bool {
    let mut any = false;
    for v in values {
        any = true;
        if v != 0.0 && v != 1.0 {
            return false;
        }
    }
    any
}

/// Builds the standardized basis from a cohort.
pub fn build_basis(cohort: &Cohort, config: &BasisConfig) -> Result<BasisMatrix, DataError> {
    let rt = config.rare_threshold;
    if !(rt > 0.0 && rt < 0.5) {
        return Err(DataError::Config(format!(
            "rare_threshold must lie in (0, 0.5), got {rt}"
        )));
    }
    let n = cohort.n();
    let nf = n as f64;
    let patients = cohort.patients();
    let names = cohort.covariate_names();

    let mut specs: Vec<(String, ColumnKind, Vec<usize>)> = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let kind = if is_binary(patients.iter().map(|p| p.covariates[k])) {
            ColumnKind::Binary
        } else {
            ColumnKind::Continuous
        };
        specs.push((name.clone(), kind, vec![k]));
    }
    if let Some(cols) = &config.comorbidity_columns {
        let mut sources = Vec::with_capacity(cols.len());
        for c in cols {
            let k = cohort
                .column_index(c)
                .ok_or_else(|| DataError::UnknownColumn { column: c.clone() })?;
            if specs[k].1 != ColumnKind::Binary {
                return Err(DataError::NonBinaryComorbidity { column: c.clone() });
            }
            sources.push(k);
        }
        specs.push((COMORBIDITY_COUNT_COLUMN.to_string(), ColumnKind::Derived, sources));
    }

    let mut columns = Vec::with_capacity(specs.len());
    let mut dropped_columns = Vec::new();
    for (name, kind, sources) in specs {
        let raw_sum = |p: &PatientRecord| -> f64 { sources.iter().map(|&s| p.covariates[s]).sum() };
        let mean = patients.iter().map(raw_sum).sum::<f64>() / nf;
        let scale = match kind {
            ColumnKind::Binary => {
                if mean == 0.0 || mean == 1.0 {
                    warn!("dropping constant binary column `{name}`");
                    dropped_columns.push(name);
                    continue;
                }
                let p = if mean < rt { rt } else { mean };
                (p * (1.0 - p)).sqrt()
            }
            ColumnKind::Continuous | ColumnKind::Derived => {
                let var = patients
                    .iter()
                    .map(|p| (raw_sum(p) - mean).powi(2))
                    .sum::<f64>()
                    / nf;
                if var <= 0.0 {
                    return Err(DataError::DegenerateColumn { column: name });
                }
                var.sqrt()
            }
        };
        columns.push(ColumnSpec {
            name,
            kind,
            center: mean,
            scale,
            sources,
        });
    }

    let p = columns.len();
    let mut phi = Array2::zeros((n, p));
    for (i, patient) in patients.iter().enumerate() {
        for (k, spec) in columns.iter().enumerate() {
            phi[[i, k]] = spec.standardize(spec.raw_value(&patient.covariates));
        }
    }
    let phi_bar = phi.sum_axis(ndarray::Axis(0)) / nf;
    Ok(BasisMatrix {
        phi,
        columns,
        phi_bar,
        target_override: None,
        dropped_columns,
    })
}

/// Basis rows and outcomes of one hospital, in file order.
pub fn hospital_slice(
    basis: &BasisMatrix,
    cohort: &Cohort,
    hospital_id: &str,
) -> Result<(Array2<f64>, Array1<f64>), DataError> {
    let rows = cohort.hospital_rows(hospital_id)?;
    let outcomes = rows
        .iter()
        .map(|&r| f64::from(cohort.patients()[r].outcome))
        .collect();
    Ok((basis.rows(rows), outcomes))
}
