use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{ensemble_dim, GRAM_CHUNK};
use crate::error::{Error, Result};
use crate::numerics::eigen::sym_eig_topk;
use crate::numerics::SparseMatrix;

/// Two-sided factorization `Ã_m ≈ L M_m Rᵀ` with orthonormal `L`, `R` (N×k).
#[derive(Debug, Clone)]
pub struct GlramFactors {
    pub l: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mid: Vec<DMatrix<f64>>,
    pub iterations: usize,
    /// RMSRE after each iteration.
    pub rmsre_history: Vec<f64>,
}

impl GlramFactors {
    pub fn reconstruct(&self, m: usize) -> DMatrix<f64> {
        &self.l * &self.mid[m] * self.r.transpose()
    }

    pub fn rmsre(&self) -> f64 {
        self.rmsre_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Sums `f(Ã_m)` over the ensemble in fixed-size chunks, combined in order.
fn ordered_sum<F>(dense: &[DMatrix<f64>], n: usize, f: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64> + Sync,
{
    let partials: Vec<DMatrix<f64>> = dense
        .par_chunks(GRAM_CHUNK)
        .map(|chunk| {
            let mut acc = DMatrix::zeros(n, n);
            for a in chunk {
                acc += f(a);
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(n, n);
    for p in &partials {
        total += p;
    }
    total
}

fn top_k(s: DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    // the alternating Grams are PSD; symmetrize away round-off before the solve
    let s = (&s + s.transpose()) * 0.5;
    Ok(sym_eig_topk(&s, k)?.vectors)
}

/// Alternating optimization of `L` and `R`, started from the first `k`
/// identity columns. Stops when the relative RMSRE change drops below
/// `rel_tol` or after `max_iters` sweeps.
pub fn glram_compress(
    ensemble: &[SparseMatrix],
    k: usize,
    max_iters: usize,
    rel_tol: f64,
) -> Result<GlramFactors> {
    let n = ensemble_dim(ensemble)?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("rank {k} outside 1..={n}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let dense: Vec<DMatrix<f64>> = ensemble.iter().map(SparseMatrix::to_dense).collect();
    let mut l = DMatrix::identity(n, k);
    let mut r = DMatrix::identity(n, k);
    let mut mid = Vec::new();
    let mut history = Vec::new();

    for _ in 0..max_iters {
        let nr = ordered_sum(&dense, n, |a| {
            let la = l.transpose() * a;
            la.transpose() * la
        });
        r = top_k(nr, k)?;
        let nl = ordered_sum(&dense, n, |a| {
            let ar = a * &r;
            &ar * ar.transpose()
        });
        l = top_k(nl, k)?;
        mid = dense.par_iter().map(|a| l.transpose() * a * &r).collect();

        let squares: Vec<f64> = dense
            .par_iter()
            .zip(mid.par_iter())
            .map(|(a, m)| (a - &l * m * r.transpose()).norm_squared())
            .collect();
        let err = (squares.iter().sum::<f64>() / dense.len() as f64).sqrt();
        let previous = history.last().copied();
        history.push(err);
        if err == 0.0 {
            break;
        }
        if let Some(prev) = previous {
            if ((prev - err) / err).abs() < rel_tol {
                break;
            }
        }
    }

    Ok(GlramFactors {
        l,
        r,
        mid,
        iterations: history.len(),
        rmsre_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_is_exact_after_one_sweep() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5)])
            .unwrap();
        let g = glram_compress(&[a.clone(), a.scale(3.0)], 3, 10, 1e-12).unwrap();
        assert!(g.rmsre_history[0] < 1e-12);
        assert!((g.reconstruct(1) - a.scale(3.0).to_dense()).norm() < 1e-12);
    }

    #[test]
    fn rejects_zero_iterations() {
        assert!(glram_compress(&[SparseMatrix::identity(2)], 1, 0, 1e-6).is_err());
    }
}
