#![allow(dead_code)]

use lram::numerics::SparseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    random_matrix(rng, n, k).qr().q().columns(0, k).into_owned()
}

/// `B Bᵀ + n I`, stored sparse.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SparseMatrix {
    let b = random_matrix(rng, n, n);
    let a = &b * b.transpose() + DMatrix::identity(n, n) * n as f64;
    SparseMatrix::from_dense(&a, 0.0)
}

/// Tridiagonal `[-1, 2, -1]`.
pub fn laplacian_1d(n: usize) -> SparseMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, 2.0));
        if i + 1 < n {
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
    }
    SparseMatrix::from_triplets(n, n, &t).unwrap()
}

/// `M` dense random matrices of size `n` with rank at most `rank`.
pub fn low_rank_ensemble(rng: &mut ChaCha8Rng, n: usize, m: usize, rank: usize) -> Vec<SparseMatrix> {
    (0..m)
        .map(|_| {
            let a = random_matrix(rng, n, rank) * random_matrix(rng, rank, n);
            SparseMatrix::from_dense(&a, 0.0)
        })
        .collect()
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<SparseMatrix> {
    (0..m)
        .map(|_| SparseMatrix::from_dense(&random_matrix(rng, n, n), 0.0))
        .collect()
}

/// `Ã_m = U C_m` with `‖C_m‖₂` small enough that `Ā + Ã_m` stays well conditioned
/// for `Ā` with smallest eigenvalue at least one.
pub fn ensemble_in_span(rng: &mut ChaCha8Rng, u: &DMatrix<f64>, m: usize, scale: f64) -> Vec<SparseMatrix> {
    let (n, k) = u.shape();
    (0..m)
        .map(|_| {
            let c = random_matrix(rng, k, n) * (scale / (n as f64).sqrt());
            SparseMatrix::from_dense(&(u * c), 0.0)
        })
        .collect()
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
