//! Run settings. Precedence: built-in defaults, then the `--config` file,
//! then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use riskbal::data::{DEFAULT_MIN_HOSPITAL_SIZE, DEFAULT_RARE_THRESHOLD};

/// Which estimate column feeds the shrinkage model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateSet {
    Raw,
    Weighted,
    BiasCorrected,
}

impl EstimateSet {
    pub fn name(self) -> &'static str {
        match self {
            EstimateSet::Raw => "raw",
            EstimateSet::Weighted => "weighted",
            EstimateSet::BiasCorrected => "bias_corrected",
        }
    }
}

impl FromStr for EstimateSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(EstimateSet::Raw),
            "weighted" => Ok(EstimateSet::Weighted),
            "bias_corrected" => Ok(EstimateSet::BiasCorrected),
            _ => Err(format!("expected raw, weighted or bias_corrected, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub target: Option<PathBuf>,
    pub lambda: f64,
    pub lower: f64,
    pub upper: f64,
    pub rare_threshold: f64,
    pub min_hospital_size: usize,
    pub comorbidity_columns: Option<Vec<String>>,
    pub lambda_grid: Vec<f64>,
    pub level: f64,
    pub gibbs_iters: usize,
    pub gibbs_burn_in: usize,
    pub gibbs_chains: usize,
    pub shrink_estimate: EstimateSet,
    pub seed: u64,
    pub threads: usize,
    pub sim_hospitals: usize,
    pub sim_reps: usize,
    pub sim_beta_bars: Vec<f64>,
    /// (sigma_alpha^2, sigma_beta^2) pairs.
    pub sim_sigma_cells: Vec<(f64, f64)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: PathBuf::from("."),
            target: None,
            lambda: 0.05,
            lower: 0.0,
            upper: 1.0,
            rare_threshold: DEFAULT_RARE_THRESHOLD,
            min_hospital_size: DEFAULT_MIN_HOSPITAL_SIZE,
            comorbidity_columns: None,
            lambda_grid: vec![0.0, 0.05, 0.1, 0.5, 1.0, 2.0, 3.5],
            level: 0.95,
            gibbs_iters: 5000,
            gibbs_burn_in: 1000,
            gibbs_chains: 4,
            shrink_estimate: EstimateSet::Weighted,
            seed: 0,
            threads: 0,
            sim_hospitals: 30,
            sim_reps: 1000,
            sim_beta_bars: (0..=9).map(|k| k as f64 / 3.0).collect(),
            sim_sigma_cells: vec![(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.source, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_cells(key: &str, value: &str) -> Result<Vec<(f64, f64)>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|cell| {
            let (a, b) = cell
                .split_once(':')
                .ok_or_else(|| format!("`{key}`: expected sigma_alpha2:sigma_beta2, got `{cell}`"))?;
            Ok((parse_value(key, a.trim())?, parse_value(key, b.trim())?))
        })
        .collect()
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "target" => self.target = Some(PathBuf::from(value)),
            "lambda" => self.lambda = parse_value(key, value)?,
            "lower" => self.lower = parse_value(key, value)?,
            "upper" => self.upper = parse_value(key, value)?,
            "rare_threshold" => self.rare_threshold = parse_value(key, value)?,
            "min_hospital_size" => self.min_hospital_size = parse_value(key, value)?,
            "comorbidity_columns" => {
                let cols: Vec<String> = parse_list(key, value)?;
                self.comorbidity_columns = if cols.is_empty() { None } else { Some(cols) };
            }
            "lambda_grid" => self.lambda_grid = parse_list(key, value)?,
            "level" => self.level = parse_value(key, value)?,
            "gibbs_iters" => self.gibbs_iters = parse_value(key, value)?,
            "gibbs_burn_in" => self.gibbs_burn_in = parse_value(key, value)?,
            "gibbs_chains" => self.gibbs_chains = parse_value(key, value)?,
            "shrink_estimate" => self.shrink_estimate = value.parse().map_err(|e| format!("`{key}`: {e}"))?,
            "seed" => self.seed = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            "sim_hospitals" => self.sim_hospitals = parse_value(key, value)?,
            "sim_reps" => self.sim_reps = parse_value(key, value)?,
            "sim_beta_bars" => self.sim_beta_bars = parse_list(key, value)?,
            "sim_sigma_cells" => self.sim_sigma_cells = parse_cells(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                source: format!("{source}:{}", lineno + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            source: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |message: String| {
            Err(ConfigError {
                source: "config".into(),
                message,
            })
        };
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if !(self.rare_threshold >= 0.0 && self.rare_threshold < 0.5) {
            return bad(format!("rare_threshold must lie in [0, 0.5), got {}", self.rare_threshold));
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda_grid is empty".into());
        }
        Ok(())
    }
}
