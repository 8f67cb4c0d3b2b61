//! Dense solves, norms and condition estimates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cholesky::factorize_spd;
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Relative pivot size below which a dense LU is declared singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-14;

/// Default power-iteration budget for `spectral_norm_estimate`.
pub const POWER_MAX_ITERS: usize = 5000;

/// Convergence threshold on the relative change of the power-iteration estimate.
pub const POWER_RTOL: f64 = 1e-12;

/// Anything that can apply `x ↦ Ax` and `x ↦ Aᵀx`.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(x)
    }
}

impl LinearOperator for SparseMatrix {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.mul_vec(x)
    }
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        self.transpose_mul_vec(x)
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve {}x{} against {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let max_pivot = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if a.nrows() > 0 && (max_pivot == 0.0 || min_pivot <= SINGULAR_PIVOT_RTOL * max_pivot) {
        let condition = if min_pivot == 0.0 {
            f64::INFINITY
        } else {
            max_pivot / min_pivot
        };
        return Err(Error::Singular { condition });
    }
    lu.solve(b).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })
}

/// Explicit inverse through `dense_solve(A, I)`.
pub fn dense_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    dense_solve(a, &DMatrix::identity(a.nrows(), a.ncols()))
}

/// Exact Frobenius norm.
pub fn frobenius_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Deterministic start vector for power iterations.
fn start_vector(n: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f90_e417);
    let v = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.5);
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

/// `‖A‖₂` via power iteration on `AᵀA`.
pub fn spectral_norm_estimate<A: LinearOperator + ?Sized>(a: &A) -> f64 {
    spectral_norm_with(a, POWER_MAX_ITERS, POWER_RTOL)
}

/// Power iteration with an explicit budget.
pub fn spectral_norm_with<A: LinearOperator + ?Sized>(a: &A, max_iters: usize, rtol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut x = start_vector(n);
    let mut estimate = 0.0f64;
    for _ in 0..max_iters.max(1) {
        let ax = a.apply(&x);
        let sigma = ax.norm();
        if sigma == 0.0 {
            return 0.0;
        }
        let y = a.apply_transpose(&ax);
        let ynorm = y.norm();
        if ynorm == 0.0 {
            return sigma;
        }
        x = y / ynorm;
        let converged = (sigma - estimate).abs() <= rtol * sigma;
        estimate = sigma;
        if converged {
            break;
        }
    }
    // one more pass to evaluate ‖A x‖ at the final unit vector
    estimate.max(a.apply(&x).norm())
}

/// `‖A‖₂ · ‖A⁻¹‖₂` estimated by power iteration on `A` and on the factored
/// inverse. Singular matrices return `+∞`.
pub fn condition_estimate(a: &SparseMatrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "condition number of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(1.0);
    }
    let norm_a = spectral_norm_with(a, 500, 1e-10);
    if norm_a == 0.0 {
        return Ok(f64::INFINITY);
    }
    let inverse_norm = if a.is_symmetric(0.0) {
        match factorize_spd(a) {
            Ok(f) => {
                let op = FnOperator::new(n, n, |x| f.solve(x), |x| f.solve(x));
                Some(spectral_norm_with(&op, 500, 1e-10))
            }
            Err(_) => None,
        }
    } else {
        None
    };
    let inverse_norm = match inverse_norm {
        Some(v) => v,
        None => {
            let dense = a.to_dense();
            let lu = dense.clone().lu();
            let lu_t = dense.transpose().lu();
            let max_pivot = lu.u().diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if min_pivot <= SINGULAR_PIVOT_RTOL * max_pivot {
                return Ok(f64::INFINITY);
            }
            let op = FnOperator::new(
                n,
                n,
                |x| lu.solve(x).expect("nonsingular"),
                |x| lu_t.solve(x).expect("nonsingular"),
            );
            spectral_norm_with(&op, 500, 1e-10)
        }
    };
    if !inverse_norm.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(norm_a * inverse_norm)
}

/// Linear operator defined by a pair of closures.
pub struct FnOperator<F, G>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    nrows: usize,
    ncols: usize,
    forward: F,
    transpose: G,
}

impl<F, G> FnOperator<F, G>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    pub fn new(nrows: usize, ncols: usize, forward: F, transpose: G) -> Self {
        Self {
            nrows,
            ncols,
            forward,
            transpose,
        }
    }
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.forward)(x)
    }
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.transpose)(x)
    }
}
