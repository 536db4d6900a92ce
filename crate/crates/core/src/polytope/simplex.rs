//! Phase-1 simplex for the feasibility of `Ax <= b` with `x` free.
//!
//! The free variables split as `x = xp - xm` with `xp, xm >= 0`; each row
//! gets a slack, and rows whose right-hand side is negative (after sign
//! normalization) get an artificial variable. Minimizing the artificial sum
//! with Bland's anti-cycling rule always terminates; the system is feasible
//! iff the optimum is (numerically) zero.

use nalgebra::{DMatrix, DVector};

const ENTER_EPS: f64 = 1e-10;
const PIVOT_EPS: f64 = 1e-11;

/// Returns a feasible point of `{x : a x <= b}`, or `None` when the system
/// is infeasible within `tol`.
pub fn phase1_feasible_point(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Option<Vec<f64>> {
    let m = a.nrows();
    let n = a.ncols();
    let n_art = (0..m).filter(|&i| b[i] < 0.0).count();
    let n_cols = 2 * n + m + n_art;

    let mut t = DMatrix::<f64>::zeros(m, n_cols);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut basis = vec![0usize; m];
    let mut art_col = 2 * n + m;
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
            t[(i, n + j)] = -sign * a[(i, j)];
        }
        t[(i, 2 * n + i)] = sign;
        rhs[i] = sign * b[i];
        if sign < 0.0 {
            t[(i, art_col)] = 1.0;
            basis[i] = art_col;
            art_col += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }

    // Reduced costs for: minimize the sum of artificials.
    let mut obj = vec![0.0f64; n_cols];
    for j in 2 * n + m..n_cols {
        obj[j] = 1.0;
    }
    for i in 0..m {
        if basis[i] >= 2 * n + m {
            for j in 0..n_cols {
                obj[j] -= t[(i, j)];
            }
        }
    }

    let max_iter = 200 * (m + n_cols) + 1000;
    for _ in 0..max_iter {
        // Bland: entering = lowest-index column with negative reduced cost.
        let Some(enter) = (0..n_cols).find(|&j| obj[j] < -ENTER_EPS) else {
            break;
        };
        // Leaving: minimum ratio; ties broken by lowest basic variable index.
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let coeff = t[(i, enter)];
            if coeff > PIVOT_EPS {
                let ratio = rhs[i] / coeff;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - 1e-12
                            || (ratio <= best_ratio + 1e-12 && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                    best_ratio = ratio.min(best_ratio);
                }
            }
        }
        // A bounded-below objective cannot have an unbounded improving ray;
        // bail out and let the optimality check below decide.
        let Some(r) = leave else { break };

        let pivot = t[(r, enter)];
        for j in 0..n_cols {
            t[(r, j)] /= pivot;
        }
        rhs[r] /= pivot;
        for i in 0..m {
            if i != r {
                let f = t[(i, enter)];
                if f != 0.0 {
                    for j in 0..n_cols {
                        t[(i, j)] -= f * t[(r, j)];
                    }
                    rhs[i] -= f * rhs[r];
                }
            }
        }
        let f = obj[enter];
        if f != 0.0 {
            for j in 0..n_cols {
                obj[j] -= f * t[(r, j)];
            }
        }
        basis[r] = enter;
    }

    let artificial_sum: f64 = (0..m)
        .filter(|&i| basis[i] >= 2 * n + m)
        .map(|i| rhs[i].max(0.0))
        .sum();
    if artificial_sum > tol {
        return None;
    }

    let mut x = vec![0.0f64; n];
    for i in 0..m {
        let v = basis[i];
        if v < n {
            x[v] += rhs[i];
        } else if v < 2 * n {
            x[v - n] -= rhs[i];
        }
    }
    Some(x)
}
