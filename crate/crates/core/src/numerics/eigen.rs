//! Symmetric eigensolvers returning the algebraically largest pairs.

use nalgebra::{DMatrix, SymmetricEigen};

use super::dense::{frobenius_norm, spectral_norm_estimate};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Relative asymmetry tolerance `max|s_ij - s_ji| / ‖S‖_F`.
pub const SYMMETRY_RTOL: f64 = 1e-10;

/// Per-pair residual bound `‖Sv - λv‖₂ / ‖S‖_F`.
pub const RESIDUAL_RTOL: f64 = 1e-8;

/// Dimension up to which the dense symmetric QR algorithm is used.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

/// Eigenvalues sorted non-increasing with their orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps the leading `k` pairs.
    pub fn truncate(&self, k: usize) -> EigenPairs {
        let k = k.min(self.len());
        EigenPairs {
            values: self.values[..k].to_vec(),
            vectors: self.vectors.columns(0, k).into_owned(),
        }
    }

    /// Largest `‖Sv - λv‖₂` over the stored pairs.
    pub fn max_residual(&self, s: &DMatrix<f64>) -> f64 {
        (0..self.len())
            .map(|i| {
                let v = self.vectors.column(i);
                (s * v - v * self.values[i]).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// Tunables for [`sym_eig_topk_with`].
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub symmetry_rtol: f64,
    pub residual_rtol: f64,
    pub dense_limit: usize,
    pub max_block_iters: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            symmetry_rtol: SYMMETRY_RTOL,
            residual_rtol: RESIDUAL_RTOL,
            dense_limit: DENSE_EIGEN_LIMIT,
            max_block_iters: 2000,
        }
    }
}

/// `k` largest eigenpairs of a symmetric matrix.
pub fn sym_eig_topk(s: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    sym_eig_topk_with(s, k, &EigenOptions::default())
}

/// Sparse input is densified first; the matrices handled here are small enough.
pub fn sym_eig_topk_sparse(s: &SparseMatrix, k: usize) -> Result<EigenPairs> {
    sym_eig_topk(&s.to_dense(), k)
}

pub fn sym_eig_topk_with(s: &DMatrix<f64>, k: usize, opts: &EigenOptions) -> Result<EigenPairs> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigenproblem needs a square matrix, got {}x{}",
            n,
            s.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let fro = frobenius_norm(s);
    let asym = max_asymmetry(s);
    if asym > opts.symmetry_rtol * fro {
        return Err(Error::NonSymmetric {
            asymmetry: asym,
            tolerance: opts.symmetry_rtol * fro,
        });
    }
    if fro == 0.0 {
        return Ok(EigenPairs {
            values: vec![0.0; k],
            vectors: DMatrix::identity(n, k),
        });
    }

    let mut pairs = if n <= opts.dense_limit {
        dense_topk(s, k)
    } else {
        block_topk(s, k, opts)?
    };
    normalize_signs(&mut pairs.vectors);

    let residual = pairs.max_residual(s);
    if residual > opts.residual_rtol * fro {
        return Err(Error::NoConvergence { residual });
    }
    Ok(pairs)
}

fn max_asymmetry(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

fn dense_topk(s: &DMatrix<f64>, k: usize) -> EigenPairs {
    // symmetrize exactly so the QR sweep sees a symmetric input
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let cols: Vec<_> = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    EigenPairs {
        values,
        vectors: DMatrix::from_columns(&cols),
    }
}

/// Subspace iteration with Rayleigh-Ritz on `S + cI`, where the shift `c = ‖S‖₂`
/// makes the spectrum non-negative so the dominant subspace is the top-`k` one.
fn block_topk(s: &DMatrix<f64>, k: usize, opts: &EigenOptions) -> Result<EigenPairs> {
    let n = s.nrows();
    let p = (2 * k).max(k + 8).min(n);
    let shift = spectral_norm_estimate(s);
    let fro = frobenius_norm(s);
    let mut q = DMatrix::from_fn(n, p, |i, j| {
        // deterministic, well-spread start block
        (((i + 1) * (j + 3)) as f64 * 0.618_033_988_75).fract() - 0.5
    });
    q = q.qr().q();
    let mut best = f64::INFINITY;
    for _ in 0..opts.max_block_iters {
        let z = s * &q + &q * shift;
        q = z.qr().q();
        let t = q.transpose() * s * &q;
        let ritz = dense_topk(&t, p);
        q = &q * &ritz.vectors;
        let pairs = EigenPairs {
            values: ritz.values[..k].to_vec(),
            vectors: q.columns(0, k).into_owned(),
        };
        let residual = pairs.max_residual(s);
        best = best.min(residual);
        if residual <= opts.residual_rtol * fro * 0.5 {
            return Ok(pairs);
        }
    }
    Err(Error::NoConvergence { residual: best })
}

/// Flips each column so that its first entry of significant magnitude is positive.
pub fn normalize_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let scale = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-8 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}
