//! Shared-left-factor compression `Ã_m ≈ U W_m` of a matrix ensemble, the
//! two-sided GLRAM baseline, and reconstruction diagnostics.

mod glram;
pub mod io;

pub use glram::{glram_compress, GlramFactors};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::eigen::{sym_eig_topk, EigenPairs};
use crate::numerics::SparseMatrix;

/// Samples per partial sum when accumulating the N-matrix. Fixed so the
/// reduction order, and therefore the result, does not depend on the pool size.
const GRAM_CHUNK: usize = 8;

/// Slack subtracted before rounding `τN` up, so that `τ = k/N` typed as a
/// decimal does not land on `k + 1`.
const RANK_ROUNDING_SLACK: f64 = 1e-9;

/// Rank-`k` factorization with shared orthonormal `U` (N×k) and per-sample `W_m` (k×N).
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub u: DMatrix<f64>,
    pub w: Vec<DMatrix<f64>>,
    pub k: usize,
    pub tau: f64,
}

impl LowRankFactors {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn m(&self) -> usize {
        self.w.len()
    }

    /// `U W_m`.
    pub fn reconstruct(&self, m: usize) -> DMatrix<f64> {
        &self.u * &self.w[m]
    }

    /// Number of stored scalars: `N k` for `U` plus `k N` per sample.
    pub fn stored_scalar_count(&self) -> usize {
        self.u.len() + self.w.iter().map(|w| w.len()).sum::<usize>()
    }

    /// Zero-perturbation factors of rank `k`, used when an ensemble vanishes.
    pub fn zero(n: usize, m: usize, k: usize) -> Self {
        Self {
            u: DMatrix::identity(n, k),
            w: vec![DMatrix::zeros(k, n); m],
            k,
            tau: k as f64 / n as f64,
        }
    }

    pub fn check_ensemble(&self, ensemble: &[SparseMatrix]) -> Result<()> {
        if ensemble.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "factors hold {} samples, ensemble has {}",
                self.m(),
                ensemble.len()
            )));
        }
        for a in ensemble {
            if a.nrows() != self.n() || a.ncols() != self.n() {
                return Err(Error::DimensionMismatch(format!(
                    "factors are {n}x{n}, sample is {}x{}",
                    a.nrows(),
                    a.ncols(),
                    n = self.n()
                )));
            }
        }
        Ok(())
    }
}

/// `k = ⌈τN⌉`, rejecting `τ ∉ (0, 1]` and any `k < 1`.
pub fn rank_for_tau(n: usize, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau = {tau} is outside (0, 1]")));
    }
    let k = (tau * n as f64 - RANK_ROUNDING_SLACK).ceil().max(0.0) as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "tau = {tau} gives rank 0 for N = {n}"
        )));
    }
    Ok(k.min(n))
}

/// Checks that the ensemble is nonempty and made of equal-size square matrices; returns N.
pub fn ensemble_dim(ensemble: &[SparseMatrix]) -> Result<usize> {
    let first = ensemble.first().ok_or(Error::EmptyEnsemble)?;
    let n = first.nrows();
    for (m, a) in ensemble.iter().enumerate() {
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "sample {m} is {}x{}, expected {n}x{n}",
                a.nrows(),
                a.ncols()
            )));
        }
    }
    Ok(n)
}

/// The N-matrix `Σ_m Ã_m Ã_mᵀ`, accumulated densely.
pub fn n_matrix(ensemble: &[SparseMatrix]) -> Result<DMatrix<f64>> {
    let n = ensemble_dim(ensemble)?;
    let partials: Vec<DMatrix<f64>> = ensemble
        .par_chunks(GRAM_CHUNK)
        .map(|chunk| {
            let mut acc = DMatrix::zeros(n, n);
            for a in chunk {
                a.accumulate_outer_gram(&mut acc);
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(n, n);
    for p in &partials {
        total += p;
    }
    Ok(total)
}

/// Full eigendecomposition of the N-matrix, from which factors of any rank are cut.
///
/// Building this once and truncating is how rank scans avoid repeating the
/// eigensolve for every `k`.
#[derive(Debug, Clone)]
pub struct LowRankBasis {
    pub eigen: EigenPairs,
}

impl LowRankBasis {
    pub fn new(ensemble: &[SparseMatrix]) -> Result<Self> {
        let gram = n_matrix(ensemble)?;
        let n = gram.nrows();
        Ok(Self {
            eigen: sym_eig_topk(&gram, n)?,
        })
    }

    pub fn n(&self) -> usize {
        self.eigen.vectors.nrows()
    }

    /// Eigenvalues of the N-matrix, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen.values
    }

    pub fn factors(&self, ensemble: &[SparseMatrix], k: usize) -> Result<LowRankFactors> {
        let n = ensemble_dim(ensemble)?;
        if n != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "basis is for N = {}, ensemble has N = {n}",
                self.n()
            )));
        }
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("rank {k} outside 1..={n}")));
        }
        let u = self.eigen.vectors.columns(0, k).into_owned();
        let w = project(ensemble, &u);
        Ok(LowRankFactors {
            u,
            w,
            k,
            tau: k as f64 / n as f64,
        })
    }
}

/// `W_m = Uᵀ Ã_m` for every sample.
pub fn project(ensemble: &[SparseMatrix], u: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    ensemble
        .par_iter()
        .map(|a| a.transpose_mul_dense(u).transpose())
        .collect()
}

/// Compresses the ensemble at rank `k = ⌈τN⌉`.
pub fn compress(ensemble: &[SparseMatrix], tau: f64) -> Result<LowRankFactors> {
    let n = ensemble_dim(ensemble)?;
    let k = rank_for_tau(n, tau)?;
    let mut factors = compress_rank(ensemble, k)?;
    factors.tau = tau;
    Ok(factors)
}

/// Compresses the ensemble at an explicit rank.
pub fn compress_rank(ensemble: &[SparseMatrix], k: usize) -> Result<LowRankFactors> {
    let n = ensemble_dim(ensemble)?;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("rank {k} outside 1..={n}")));
    }
    let gram = n_matrix(ensemble)?;
    let pairs = sym_eig_topk(&gram, k)?;
    let w = project(ensemble, &pairs.vectors);
    Ok(LowRankFactors {
        u: pairs.vectors,
        w,
        k,
        tau: k as f64 / n as f64,
    })
}

/// `√((1/M) Σ_m ‖Ã_m − U W_m‖_F²)` from explicit reconstructions.
pub fn rmsre(ensemble: &[SparseMatrix], factors: &LowRankFactors) -> Result<f64> {
    ensemble_dim(ensemble)?;
    factors.check_ensemble(ensemble)?;
    let squares: Vec<f64> = ensemble
        .par_iter()
        .enumerate()
        .map(|(m, a)| {
            let diff = a.to_dense() - factors.reconstruct(m);
            diff.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    Ok((squares.iter().sum::<f64>() / ensemble.len() as f64).sqrt())
}

/// How eigenvalues of the N-matrix enter the energy ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyConvention {
    /// `e(k) = Σ_{i≤k} λ_i / Σ_i λ_i`.
    #[default]
    Eigen,
    /// `e(k) = Σ_{i≤k} λ_i² / Σ_i λ_i²`.
    EigenSquared,
}

/// `(k, e(k))` for `k = 1..=N`.
pub type EnergyCurve = Vec<(usize, f64)>;

/// Energy curve from a descending eigenvalue list. Negative round-off
/// eigenvalues are clamped to zero so the curve stays monotone.
pub fn energy_curve(eigenvalues: &[f64], convention: EnergyConvention) -> Result<EnergyCurve> {
    if eigenvalues.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weights: Vec<f64> = eigenvalues
        .iter()
        .map(|&l| {
            let l = l.max(0.0);
            match convention {
                EnergyConvention::Eigen => l,
                EnergyConvention::EigenSquared => l * l,
            }
        })
        .collect();
    let mut prefix = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        prefix.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Err(Error::ZeroEnsemble);
    }
    Ok(prefix
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1, p / total))
        .collect())
}

/// Energy ratio with plain eigenvalue partial sums.
pub fn energy_ratio_eigen(ensemble: &[SparseMatrix]) -> Result<EnergyCurve> {
    energy_ratio(ensemble, EnergyConvention::Eigen)
}

/// Energy ratio with squared eigenvalues.
pub fn energy_ratio_eigensq(ensemble: &[SparseMatrix]) -> Result<EnergyCurve> {
    energy_ratio(ensemble, EnergyConvention::EigenSquared)
}

pub fn energy_ratio(ensemble: &[SparseMatrix], convention: EnergyConvention) -> Result<EnergyCurve> {
    if ensemble.iter().all(|a| a.values().iter().all(|&v| v == 0.0)) {
        ensemble_dim(ensemble)?;
        return Err(Error::ZeroEnsemble);
    }
    let basis = LowRankBasis::new(ensemble)?;
    energy_curve(basis.eigenvalues(), convention)
}

/// `r = (N k + M N k) / (M N²) = (k/N)(1 + 1/M)`.
pub fn compression_ratio(n: usize, k: usize, m: usize) -> f64 {
    let (n, k, m) = (n as f64, k as f64, m as f64);
    (n * k + m * n * k) / (m * n * n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e11(n: usize) -> SparseMatrix {
        SparseMatrix::from_triplets(n, n, &[(0, 0, 1.0)]).unwrap()
    }

    #[test]
    fn rank_rounding() {
        assert_eq!(rank_for_tau(665, 0.88).unwrap(), 586);
        assert_eq!(rank_for_tau(665, 585.0 / 665.0).unwrap(), 585);
        assert_eq!(rank_for_tau(4, 0.25).unwrap(), 1);
        assert_eq!(rank_for_tau(10, 1.0).unwrap(), 10);
        assert!(rank_for_tau(10, 0.0).is_err());
        assert!(rank_for_tau(10, 1.5).is_err());
        assert!(rank_for_tau(10, 1e-12).is_err());
    }

    #[test]
    fn exact_rank_one() {
        let ens = vec![e11(4)];
        let f = compress(&ens, 0.25).unwrap();
        assert_eq!(f.k, 1);
        assert!((f.u[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(rmsre(&ens, &f).unwrap() < 1e-14);
    }

    #[test]
    fn hand_checked_rmsre() {
        let ens = vec![SparseMatrix::from_diagonal(&[0.0, 1.0])];
        let f = LowRankFactors {
            u: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            w: vec![DMatrix::zeros(1, 2)],
            k: 1,
            tau: 0.5,
        };
        assert!((rmsre(&ens, &f).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_of_rank_one_and_zero() {
        let curve = energy_ratio_eigen(&[e11(3)]).unwrap();
        assert_eq!(curve[0], (1, 1.0));
        assert_eq!(curve.last().unwrap().1, 1.0);
        assert!(matches!(
            energy_ratio_eigen(&[SparseMatrix::zeros(3, 3)]),
            Err(Error::ZeroEnsemble)
        ));
    }

    #[test]
    fn energy_conventions_from_known_eigenvalues() {
        let plain = energy_curve(&[4.0, 3.0, 2.0, 1.0], EnergyConvention::Eigen).unwrap();
        assert!((plain[1].1 - 0.7).abs() < 1e-15);
        let sq = energy_curve(&[4.0, 3.0, 2.0, 1.0], EnergyConvention::EigenSquared).unwrap();
        assert!((sq[1].1 - 25.0 / 30.0).abs() < 1e-15);
        assert_eq!(sq[3].1, 1.0);
    }

    #[test]
    fn ratio_examples() {
        assert!((compression_ratio(665, 585, 500) - 0.8815).abs() < 5e-5);
        assert_eq!(compression_ratio(10, 5, 1), 1.0);
        assert!((compression_ratio(50, 50, 1_000_000) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_ensembles() {
        assert!(matches!(compress(&[], 0.5), Err(Error::EmptyEnsemble)));
        let ens = vec![SparseMatrix::identity(3), SparseMatrix::identity(4)];
        assert!(matches!(compress(&ens, 0.5), Err(Error::DimensionMismatch(_))));
    }
}
