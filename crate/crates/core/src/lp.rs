//! Small dense linear programs of the form
//!
//! ```text
//! maximize    c'x
//! subject to  A x <= b,  x >= 0,  with b >= 0
//! ```
//!
//! The origin is always feasible, so a single-phase tableau simplex
//! suffices. Once the simplex settles on a basis the primal and dual values
//! are recomputed from an LU factorization of the basis matrix, which keeps
//! the feasibility residuals near machine precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{PlanError, Result};

const PIVOT_TOL: f64 = 1e-12;
const COST_TOL: f64 = 1e-12;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Row slacks `b - A x`.
    pub slack: Vec<f64>,
    /// Row multipliers, one per constraint row, all non-negative.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Solves `max c'x s.t. A x <= b, x >= 0`.
///
/// `a` is row-major with `b.len()` rows of `c.len()` entries.
pub fn maximize(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpSolution> {
    let m = b.len();
    let n = c.len();
    if a.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(PlanError::InvalidArgument("LP dimensions do not agree".into()));
    }
    if b.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(PlanError::InvalidArgument(
            "LP right-hand side must be finite and non-negative".into(),
        ));
    }

    // Tableau columns: n structural, m slack, 1 rhs.
    let width = n + m + 1;
    let rhs = n + m;
    let mut tab = vec![0.0; m * width];
    for i in 0..m {
        let row = &mut tab[i * width..(i + 1) * width];
        row[..n].copy_from_slice(&a[i]);
        row[n + i] = 1.0;
        row[rhs] = b[i];
    }
    let mut reduced: Vec<f64> = c.iter().copied().chain(std::iter::repeat(0.0).take(m)).collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut pivots = 0;
    let mut degenerate_run = 0;
    let max_pivots = 50 * (n + m) + 1000;
    loop {
        let bland = degenerate_run >= DEGENERATE_SWITCH;
        let entering = if bland {
            (0..n + m).find(|&j| reduced[j] > COST_TOL)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (j, &r) in reduced.iter().enumerate() {
                if r > COST_TOL && best.map_or(true, |(_, v)| r > v) {
                    best = Some((j, r));
                }
            }
            best.map(|(j, _)| j)
        };
        let Some(col) = entering else { break };

        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            let coef = tab[i * width + col];
            if coef > PIVOT_TOL {
                let ratio = tab[i * width + rhs] / coef;
                let better = match leaving {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && basis[i] < basis[li])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((row, ratio)) = leaving else {
            return Err(PlanError::Unbounded);
        };
        degenerate_run = if ratio <= 1e-14 { degenerate_run + 1 } else { 0 };

        let pivot = tab[row * width + col];
        for v in &mut tab[row * width..(row + 1) * width] {
            *v /= pivot;
        }
        let pivot_row: Vec<f64> = tab[row * width..(row + 1) * width].to_vec();
        for i in 0..m {
            if i == row {
                continue;
            }
            let f = tab[i * width + col];
            if f != 0.0 {
                let r = &mut tab[i * width..(i + 1) * width];
                for (v, p) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
        let f = reduced[col];
        for (v, p) in reduced.iter_mut().zip(&pivot_row[..n + m]) {
            *v -= f * p;
        }
        basis[row] = col;
        pivots += 1;
        if pivots > max_pivots {
            break;
        }
    }

    finish(a, b, c, &basis, pivots)
}

fn column(a: &[Vec<f64>], n: usize, j: usize, i: usize) -> f64 {
    if j < n {
        a[i][j]
    } else if j - n == i {
        1.0
    } else {
        0.0
    }
}

fn finish(a: &[Vec<f64>], b: &[f64], c: &[f64], basis: &[usize], pivots: usize) -> Result<LpSolution> {
    let m = b.len();
    let n = c.len();
    let bmat = DMatrix::from_fn(m, m, |i, k| column(a, n, basis[k], i));
    let lu = bmat.clone().lu();
    let cost = |j: usize| if j < n { c[j] } else { 0.0 };
    let xb = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or_else(|| PlanError::InvalidArgument("singular LP basis".into()))?;
    let cb = DVector::from_iterator(m, basis.iter().map(|&j| cost(j)));
    let y = bmat
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or_else(|| PlanError::InvalidArgument("singular LP basis".into()))?;

    let mut full = vec![0.0; n + m];
    for (k, &j) in basis.iter().enumerate() {
        full[j] = xb[k].max(0.0);
    }
    let x = full[..n].to_vec();
    let slack = (0..m)
        .map(|i| b[i] - a[i].iter().zip(&x).map(|(aij, xj)| aij * xj).sum::<f64>())
        .collect();
    let duals = y.iter().map(|v| v.max(0.0)).collect();
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        slack,
        duals,
        objective,
        pivots,
    })
}

#[cfg(test)]
pub(crate) fn residuals(a: &[Vec<f64>], b: &[f64], c: &[f64], sol: &LpSolution) -> (f64, f64, f64) {
    let m = b.len();
    let n = c.len();
    let mut primal: f64 = sol.x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    for i in 0..m {
        let ax: f64 = (0..n).map(|j| a[i][j] * sol.x[j]).sum();
        primal = primal.max(ax - b[i]);
    }
    let mut dual: f64 = 0.0;
    for j in 0..n {
        let aty: f64 = (0..m).map(|i| a[i][j] * sol.duals[i]).sum();
        dual = dual.max(c[j] - aty);
    }
    let dual_obj: f64 = b.iter().zip(&sol.duals).map(|(bi, yi)| bi * yi).sum();
    (primal, dual, (dual_obj - sol.objective).abs())
}
