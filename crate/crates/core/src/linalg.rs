//! Symmetric positive-definite solves for the small p x p normal equations.

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Diagonal jitter, relative to the largest diagonal entry, added when the
/// plain factorization hits a non-positive pivot.
pub const JITTER: f64 = 1e-10;

/// Pivot threshold (relative to the original diagonal entry) below which a
/// column counts as linearly dependent on the preceding ones.
const PIVOT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("singular system: columns {columns:?} are collinear")]
pub struct SingularError {
    pub columns: Vec<usize>,
}

/// Lower-triangular Cholesky factor, or the indices of failing pivots.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, Vec<usize>> {
    let p = a.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    let mut bad = Vec::new();
    for j in 0..p {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > PIVOT_REL_TOL * a[[j, j]].abs()) || !d.is_finite() {
            bad.push(j);
            // keep going so every dependent column gets reported
            l[[j, j]] = f64::NAN;
            continue;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..p {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    if bad.is_empty() {
        Ok(l)
    } else {
        Err(bad)
    }
}

fn substitute(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Result of [`solve_spd`].
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Array1<f64>,
    /// Columns that needed jitter to factor; empty for a clean solve.
    pub jittered: Vec<usize>,
}

/// Solves `a x = b` for symmetric positive semi-definite `a`, retrying with
/// diagonal jitter on rank deficiency.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<SpdSolution, SingularError> {
    match cholesky(a) {
        Ok(l) => Ok(SpdSolution {
            x: substitute(&l, b),
            jittered: Vec::new(),
        }),
        Err(bad) => {
            let scale = a.diag().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
            let mut aj = a.clone();
            for i in 0..aj.nrows() {
                aj[[i, i]] += JITTER * scale;
            }
            match cholesky(&aj) {
                Ok(l) => {
                    let x = substitute(&l, b);
                    if x.iter().all(|v| v.is_finite()) {
                        Ok(SpdSolution { x, jittered: bad })
                    } else {
                        Err(SingularError { columns: bad })
                    }
                }
                Err(_) => Err(SingularError { columns: bad }),
            }
        }
    }
}
