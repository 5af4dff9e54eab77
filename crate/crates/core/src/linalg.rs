//! Small dense linear algebra for the solver and weight repair.
//!
//! Everything here works on symmetric positive (semi-)definite normal
//! matrices of modest size (tens to a few hundred rows); a plain
//! Cholesky factorization in f64 handles those without LAPACK bindings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Gram matrix `XᵀX`.
pub fn gram(x: ArrayView2<f64>) -> Array2<f64> {
    x.t().dot(&x)
}

/// `XᵀY` for a vector right-hand side.
pub fn xty(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    x.t().dot(&y)
}

/// In-place Cholesky factorization `A = LLᵀ` of a symmetric matrix.
/// Fails (returns `None`) when a pivot drops below `tol`, i.e. the matrix
/// is not positive definite to working precision.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(1e-300);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= tol || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solve `L Lᵀ x = b` given the Cholesky factor `L`, one column at a time.
fn cholesky_backsolve(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut x = b.clone();
    for c in 0..m {
        // forward: L z = b
        for i in 0..n {
            let mut s = x[[i, c]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        // backward: Lᵀ x = z
        for i in (0..n).rev() {
            let mut s = x[[i, c]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    x
}

/// Result of a normal-equations solve.
pub struct NormalSolve {
    /// Solution matrix, one column per right-hand side.
    pub solution: Array2<f64>,
    /// True when the plain system was singular and a ridge term
    /// `1e-8 · trace(A)` had to be added to the diagonal.
    pub ridge_fallback: bool,
}

/// Solve `A X = B` for symmetric positive semi-definite `A` (a Gram
/// matrix). Singular systems fall back to a ridge-regularized solve with
/// `lambda = 1e-8 · trace(A)`; the fallback is flagged in the result.
pub fn solve_normal_equations(a: &Array2<f64>, b: &Array2<f64>) -> NormalSolve {
    if let Some(l) = cholesky(a) {
        return NormalSolve {
            solution: cholesky_backsolve(&l, b),
            ridge_fallback: false,
        };
    }
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
    let lambda = if trace > 0.0 { 1e-8 * trace } else { 1e-12 };
    let mut ridged = a.clone();
    for i in 0..n {
        ridged[[i, i]] += lambda;
    }
    match cholesky(&ridged) {
        Some(l) => NormalSolve {
            solution: cholesky_backsolve(&l, b),
            ridge_fallback: true,
        },
        // A zero (or hopelessly degenerate) design: the zero solution is
        // the minimum-norm answer.
        None => NormalSolve {
            solution: Array2::zeros(b.raw_dim()),
            ridge_fallback: true,
        },
    }
}

/// Gershgorin upper bound on the largest eigenvalue of a symmetric
/// matrix: `max_i Σ_j |a_ij|`. Used to pick a provably stable gradient
/// step size.
pub fn gershgorin_bound(a: &Array2<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
