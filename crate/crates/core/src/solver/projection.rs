//! Euclidean projection onto `{x : sum x = 1, lower <= x_i <= upper}`.

use super::SolverError;

/// Target accuracy of the sum constraint.
pub const SUM_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

/// Checks `n * lower <= 1 <= n * upper` (with a rounding allowance).
pub fn check_feasible(n: usize, lower: f64, upper: f64) -> Result<(), SolverError> {
    let nf = n as f64;
    if n == 0
        || !(lower <= upper)
        || nf * lower > 1.0 + SUM_TOL
        || nf * upper < 1.0 - SUM_TOL
    {
        return Err(SolverError::Infeasible { n, lower, upper });
    }
    Ok(())
}

#[inline]
fn clip(x: f64, lower: f64, upper: f64) -> f64 {
    x.max(lower).min(upper)
}

fn shifted_sum(v: &[f64], theta: f64, lower: f64, upper: f64) -> f64 {
    v.iter().map(|&x| clip(x - theta, lower, upper)).sum()
}

/// Projects `v` onto the capped simplex.
///
/// The solution has the form `clip(v_i - theta, lower, upper)`; `theta` is
/// found by bisection on the (non-increasing) sum, then polished by solving
/// exactly for the free coordinates.
pub fn project_simplex_box(v: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>, SolverError> {
    let mut out = vec![0.0; v.len()];
    project_into(v, lower, upper, &mut out)?;
    Ok(out)
}

/// Allocation-free variant of [`project_simplex_box`].
pub fn project_into(v: &[f64], lower: f64, upper: f64, out: &mut [f64]) -> Result<(), SolverError> {
    let n = v.len();
    check_feasible(n, lower, upper)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    debug_assert_eq!(out.len(), n);

    let (vmin, vmax) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    // sum(lo) = n * upper >= 1 and sum(hi) = n * lower <= 1
    let mut lo = vmin - upper;
    let mut hi = vmax - lower;
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECTIONS {
        theta = 0.5 * (lo + hi);
        let s = shifted_sum(v, theta, lower, upper);
        if (s - 1.0).abs() < SUM_TOL {
            break;
        }
        if s > 1.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo <= f64::EPSILON * (1.0 + theta.abs()) {
            break;
        }
    }

    // Polish: with the active set fixed, theta solves a scalar linear equation.
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut fixed = 0.0;
    for &x in v {
        let y = x - theta;
        if y <= lower {
            fixed += lower;
        } else if y >= upper {
            fixed += upper;
        } else {
            free_sum += x;
            free += 1;
        }
    }
    if free > 0 {
        let exact = (free_sum + fixed - 1.0) / free as f64;
        if (shifted_sum(v, exact, lower, upper) - 1.0).abs()
            <= (shifted_sum(v, theta, lower, upper) - 1.0).abs()
        {
            theta = exact;
        }
    }
    for (o, &x) in out.iter_mut().zip(v) {
        *o = clip(x - theta, lower, upper);
    }

    // Spread any last rounding residue over coordinates strictly inside the box.
    let resid = 1.0 - out.iter().sum::<f64>();
    if resid.abs() > 0.0 {
        let inner: Vec<usize> = (0..n)
            .filter(|&i| out[i] > lower && out[i] < upper)
            .collect();
        if !inner.is_empty() {
            let share = resid / inner.len() as f64;
            for i in inner {
                out[i] = clip(out[i] + share, lower, upper);
            }
        }
    }
    Ok(())
}
