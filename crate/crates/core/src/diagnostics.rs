//! Balance diagnostics: outcome-weighted bias deltas, percent bias
//! reduction, per-covariate balance and the lambda frontier.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::data::{BasisMatrix, Cohort};
use crate::estimator::imbalances;
use crate::linalg::solve_spd;
use crate::solver::{solve_all_from, SolverConfig, SolverError, WeightSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("variable-importance regression is singular: columns {0:?}")]
    Singular(Vec<String>),
    #[error("percent bias reduction undefined: hospitals are already balanced")]
    UndefinedPbr,
    #[error("lambda grid must be sorted ascending and non-negative")]
    UnsortedGrid,
    #[error("lambda = {lambda}, hospital `{hospital_id}`: {error}")]
    Solver {
        lambda: f64,
        hospital_id: String,
        error: SolverError,
    },
    #[error("alignment error: {0}")]
    Alignment(String),
}

/// OLS slopes of `Y` on the basis (with intercept, not returned).
pub fn variable_importance(basis: &BasisMatrix, outcomes: &[f64]) -> Result<Array1<f64>, DiagnosticsError> {
    let n = basis.phi.nrows();
    if outcomes.len() != n {
        return Err(DiagnosticsError::Alignment(format!(
            "{} outcomes for {} basis rows",
            outcomes.len(),
            n
        )));
    }
    let p = basis.p();
    let nf = n as f64;
    let xbar = basis.phi.sum_axis(ndarray::Axis(0)) / nf;
    let ybar = outcomes.iter().sum::<f64>() / nf;
    let mut gram = Array2::<f64>::zeros((p, p));
    let mut rhs = Array1::<f64>::zeros(p);
    for (row, &y) in basis.phi.outer_iter().zip(outcomes) {
        let xt = &row - &xbar;
        let yt = y - ybar;
        for a in 0..p {
            rhs[a] += xt[a] * yt;
            for b in a..p {
                gram[[a, b]] += xt[a] * xt[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
    }
    solve_spd(&gram, &rhs).map(|s| s.x).map_err(|e| {
        DiagnosticsError::Singular(e.columns.iter().map(|&c| basis.columns[c].name.clone()).collect())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HospitalBias {
    pub hospital_id: String,
    /// `(unweighted hospital mean - target) . eta`
    pub delta_raw: f64,
    /// `(weighted hospital mean - target) . eta`
    pub delta_weighted: f64,
    pub imbalance_l2_raw: f64,
    pub imbalance_l2_weighted: f64,
}

pub fn bias_deltas(
    basis: &BasisMatrix,
    cohort: &Cohort,
    weights: &WeightSet,
    eta: &Array1<f64>,
) -> Vec<HospitalBias> {
    let target = basis.target();
    let weighted = imbalances(weights, basis, cohort);
    weights
        .hospitals
        .iter()
        .zip(weighted)
        .map(|(h, imb_w)| {
            let rows = &cohort.hospitals()[&h.hospital_id];
            let raw_mean = basis.rows(rows).sum_axis(ndarray::Axis(0)) / rows.len() as f64;
            let imb_raw = raw_mean - target;
            HospitalBias {
                hospital_id: h.hospital_id.clone(),
                delta_raw: imb_raw.dot(eta),
                delta_weighted: imb_w.dot(eta),
                imbalance_l2_raw: imb_raw.dot(&imb_raw).sqrt(),
                imbalance_l2_weighted: imb_w.dot(&imb_w).sqrt(),
            }
        })
        .collect()
}

/// `100 * (1 - mean|delta_weighted| / mean|delta_raw|)`.
pub fn percent_bias_reduction(deltas: &[HospitalBias]) -> Result<f64, DiagnosticsError> {
    let raw: f64 = deltas.iter().map(|d| d.delta_raw.abs()).sum();
    let weighted: f64 = deltas.iter().map(|d| d.delta_weighted.abs()).sum();
    if !(raw > 0.0) {
        return Err(DiagnosticsError::UndefinedPbr);
    }
    // the 1/H factors cancel
    Ok(100.0 * (1.0 - weighted / raw))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub eta: Array1<f64>,
    pub hospitals: Vec<HospitalBias>,
    pub pbr: f64,
    pub avg_ess: f64,
}

pub fn bias_report(
    basis: &BasisMatrix,
    cohort: &Cohort,
    weights: &WeightSet,
    outcomes: &[f64],
) -> Result<BiasReport, DiagnosticsError> {
    let eta = variable_importance(basis, outcomes)?;
    let hospitals = bias_deltas(basis, cohort, weights, &eta);
    let pbr = percent_bias_reduction(&hospitals)?;
    Ok(BiasReport {
        eta,
        hospitals,
        pbr,
        avg_ess: weights.avg_ess(),
    })
}

/// One point on the bias/effective-sample-size frontier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub lambda: f64,
    pub pbr: f64,
    pub avg_ess: f64,
    pub all_converged: bool,
}

/// Solves the weights along an ascending lambda grid, warm-starting each
/// point from the previous solution.
pub fn lambda_sweep(
    basis: &BasisMatrix,
    cohort: &Cohort,
    eta: &Array1<f64>,
    grid: &[f64],
    config: &SolverConfig,
) -> Result<Vec<FrontierPoint>, DiagnosticsError> {
    if grid.iter().any(|l| !(*l >= 0.0)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(DiagnosticsError::UnsortedGrid);
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut previous: Option<WeightSet> = None;
    for &lambda in grid {
        let cfg = config.with_lambda(lambda);
        let ws = solve_all_from(basis, cohort, &cfg, previous.as_ref());
        if let Some(f) = ws.failures.first() {
            return Err(DiagnosticsError::Solver {
                lambda,
                hospital_id: f.hospital_id.clone(),
                error: f.error.clone(),
            });
        }
        let deltas = bias_deltas(basis, cohort, &ws, eta);
        out.push(FrontierPoint {
            lambda,
            pbr: percent_bias_reduction(&deltas)?,
            avg_ess: ws.avg_ess(),
            all_converged: ws.all_converged(),
        });
        previous = Some(ws);
    }
    Ok(out)
}

/// Standardized mean difference of one covariate in one hospital.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub hospital_id: String,
    pub covariate: String,
    pub smd_raw: f64,
    pub smd_weighted: f64,
}

/// Hospital-by-covariate balance before and after weighting. The basis is
/// already standardized, so differences from the target are SMDs.
pub fn balance_table(basis: &BasisMatrix, cohort: &Cohort, weights: &WeightSet) -> Vec<BalanceRow> {
    let target = basis.target();
    let weighted = imbalances(weights, basis, cohort);
    let mut out = Vec::with_capacity(weights.hospitals.len() * basis.p());
    for (h, imb_w) in weights.hospitals.iter().zip(weighted) {
        let rows = &cohort.hospitals()[&h.hospital_id];
        let raw_mean = basis.rows(rows).sum_axis(ndarray::Axis(0)) / rows.len() as f64;
        for (k, spec) in basis.columns.iter().enumerate() {
            out.push(BalanceRow {
                hospital_id: h.hospital_id.clone(),
                covariate: spec.name.clone(),
                smd_raw: raw_mean[k] - target[k],
                smd_weighted: imb_w[k],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_basis, BasisConfig, PatientRecord};
    use crate::solver::solve_all;

    fn cohort(rows: &[(&str, u8, [f64; 2])]) -> Cohort {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, (h, y, x))| PatientRecord {
                row_index: i,
                hospital_id: h.to_string(),
                outcome: *y,
                covariates: x.to_vec(),
            })
            .collect();
        Cohort::from_records(vec!["a".into(), "b".into()], records, 1).unwrap()
    }

    fn small() -> Cohort {
        cohort(&[
            // pooled mean (15/7, 9.5/7) lies inside both hospitals' hulls
            ("A", 1, [0.0, 0.0]),
            ("A", 0, [4.0, 0.0]),
            ("A", 1, [3.0, 4.0]),
            ("B", 1, [1.0, 1.0]),
            ("B", 0, [3.0, 1.0]),
            ("B", 0, [2.0, 3.0]),
            ("B", 1, [2.0, 0.5]),
        ])
    }

    fn hb(raw: f64, weighted: f64) -> HospitalBias {
        HospitalBias {
            hospital_id: String::new(),
            delta_raw: raw,
            delta_weighted: weighted,
            imbalance_l2_raw: 0.0,
            imbalance_l2_weighted: 0.0,
        }
    }

    #[test]
    fn pbr_examples() {
        assert_eq!(percent_bias_reduction(&[hb(0.1, 0.0), hb(-0.3, 0.0)]).unwrap(), 100.0);
        assert_eq!(percent_bias_reduction(&[hb(0.1, 0.1), hb(-0.3, -0.3)]).unwrap(), 0.0);
        let pbr = percent_bias_reduction(&[hb(0.1, 0.02), hb(-0.1, -0.02)]).unwrap();
        assert!((pbr - 80.0).abs() < 1e-12);
        assert!(percent_bias_reduction(&[hb(0.1, 0.3)]).unwrap() < 0.0);
        assert_eq!(
            percent_bias_reduction(&[hb(0.0, 0.0)]),
            Err(DiagnosticsError::UndefinedPbr)
        );
    }

    #[test]
    fn importance_of_constant_and_exact_outcomes() {
        let c = small();
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let eta = variable_importance(&basis, &vec![0.7; c.n()]).unwrap();
        assert!(eta.iter().all(|e| e.abs() < 1e-12));
        let y: Vec<f64> = basis.phi.column(0).to_vec();
        let eta = variable_importance(&basis, &y).unwrap();
        assert!((eta[0] - 1.0).abs() < 1e-10 && eta[1].abs() < 1e-10);
    }

    /// Gaussian elimination with partial pivoting on the augmented system.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn importance_matches_normal_equations_oracle() {
        let c = small();
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let y = c.outcomes();
        // design [1, phi] with uncentered normal equations
        let rows: Vec<Vec<f64>> = basis
            .phi
            .outer_iter()
            .map(|r| std::iter::once(1.0).chain(r.iter().cloned()).collect())
            .collect();
        let k = rows[0].len();
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        for (r, yi) in rows.iter().zip(&y) {
            for a in 0..k {
                xty[a] += r[a] * yi;
                for b in 0..k {
                    xtx[a][b] += r[a] * r[b];
                }
            }
        }
        let oracle = gauss_solve(xtx, xty);
        let eta = variable_importance(&basis, &y).unwrap();
        for j in 0..2 {
            assert!((eta[j] - oracle[j + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn deltas_vanish_when_expected() {
        let c = small();
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let w = solve_all(&basis, &c, &SolverConfig::default().with_lambda(0.0));
        let zero = Array1::zeros(2);
        for d in bias_deltas(&basis, &c, &w, &zero) {
            assert_eq!(d.delta_raw, 0.0);
            assert_eq!(d.delta_weighted, 0.0);
        }
        let eta = Array1::from(vec![0.4, -0.2]);
        let d = bias_deltas(&basis, &c, &w, &eta);
        // linear in eta
        let d2 = bias_deltas(&basis, &c, &w, &(&eta * 3.0));
        for (a, b) in d.iter().zip(&d2) {
            assert!((3.0 * a.delta_raw - b.delta_raw).abs() < 1e-12);
            assert!((3.0 * a.delta_weighted - b.delta_weighted).abs() < 1e-12);
        }
        // PBR is scale invariant
        let p1 = percent_bias_reduction(&d).unwrap();
        let p2 = percent_bias_reduction(&d2).unwrap();
        assert!((p1 - p2).abs() < 1e-9);
        // balanceable hospitals give zero weighted delta
        for x in &d {
            assert!(x.delta_weighted.abs() < 1e-7, "{x:?}");
        }
    }

    #[test]
    fn hospital_at_population_mean_has_zero_raw_delta() {
        // both hospitals share the same covariate mean
        let c = cohort(&[
            ("A", 1, [0.0, 1.0]),
            ("A", 0, [2.0, 3.0]),
            ("B", 1, [1.0, 2.0]),
            ("B", 0, [1.0, 2.0]),
        ]);
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let w = solve_all(&basis, &c, &SolverConfig::default());
        for d in bias_deltas(&basis, &c, &w, &Array1::from(vec![1.0, 1.0])) {
            assert!(d.delta_raw.abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let c = small();
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let eta = Array1::from(vec![1.0, 1.0]);
        assert_eq!(
            lambda_sweep(&basis, &c, &eta, &[1.0, 0.5], &SolverConfig::default()),
            Err(DiagnosticsError::UnsortedGrid)
        );
        let cfg = SolverConfig {
            upper: 0.2,
            ..Default::default()
        };
        assert!(matches!(
            lambda_sweep(&basis, &c, &eta, &[0.5], &cfg),
            Err(DiagnosticsError::Solver { .. })
        ));
    }

    #[test]
    fn sweep_limits() {
        let c = small();
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let eta = variable_importance(&basis, &c.outcomes()).unwrap();
        let pts = lambda_sweep(&basis, &c, &eta, &[0.0, 1e6], &SolverConfig::default()).unwrap();
        // lambda = 0 reaches the best PBR available; here both hospitals balance exactly
        assert!((pts[0].pbr - 100.0).abs() < 1e-5);
        // lambda -> infinity gives uniform weights: ESS is the mean hospital size
        assert!((pts[1].avg_ess - 3.5).abs() < 1e-3);
        assert!(pts[1].pbr.abs() < 1e-2);
    }

    #[test]
    fn balance_rows_cover_hospitals_and_covariates() {
        let c = small();
        let basis = build_basis(&c, &BasisConfig::default()).unwrap();
        let w = solve_all(&basis, &c, &SolverConfig::default().with_lambda(0.0));
        let rows = balance_table(&basis, &c, &w);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.smd_weighted.abs() < 1e-7));
        assert!(rows.iter().any(|r| r.smd_raw.abs() > 0.1));
    }
}
