mod common;

use lram::lowrank::io::{load_factors, save_factors};
use lram::lowrank::{
    compress, compress_rank, compression_ratio, energy_ratio, glram_compress, n_matrix, rank_for_tau, rmsre,
    EnergyConvention, LowRankFactors,
};
use lram::numerics::SparseMatrix;
use lram::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;

/// `Σ_m ‖Ã_m − U Uᵀ Ã_m‖_F²` for an arbitrary orthonormal `U`.
fn projection_residual(ensemble: &[SparseMatrix], u: &DMatrix<f64>) -> f64 {
    ensemble
        .iter()
        .map(|a| {
            let d = a.to_dense();
            (&d - u * (u.transpose() * &d)).norm_squared()
        })
        .sum()
}

fn full_spectrum(ensemble: &[SparseMatrix]) -> Vec<f64> {
    let mut v: Vec<f64> = n_matrix(ensemble).unwrap().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn compress_attains_eigenvalue_tail(seed in any::<u64>(), n in 2usize..13, m in 1usize..6, k_frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let ens = random_ensemble(&mut r, n, m);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let f = compress_rank(&ens, k).unwrap();
        let tail: f64 = full_spectrum(&ens)[k..].iter().map(|l| l.max(0.0)).sum();
        let residual = projection_residual(&ens, &f.u);
        prop_assert!((residual.sqrt() - tail.sqrt()).abs() < 1e-8);
        let rm = rmsre(&ens, &f).unwrap();
        prop_assert!((rm * (m as f64).sqrt() - tail.sqrt()).abs() < 1e-8);
        for _ in 0..20 {
            let q = random_orthonormal(&mut r, n, k);
            prop_assert!(projection_residual(&ens, &q) >= residual - 1e-9);
        }
    }

    #[test]
    fn rmsre_is_monotone_in_rank(seed in any::<u64>(), n in 2usize..12, m in 1usize..5) {
        let mut r = rng(seed);
        let ens = random_ensemble(&mut r, n, m);
        let errs: Vec<f64> = (1..=n).map(|k| rmsre(&ens, &compress_rank(&ens, k).unwrap()).unwrap()).collect();
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        prop_assert!(errs[n - 1] <= 1e-10 * ens.iter().map(|a| a.frobenius_norm()).fold(0.0, f64::max));
    }

    #[test]
    fn energy_ratio_matches_rmsre(seed in any::<u64>(), n in 2usize..10, m in 1usize..5) {
        let mut r = rng(seed);
        let ens = random_ensemble(&mut r, n, m);
        let curve = energy_ratio(&ens, EnergyConvention::Eigen).unwrap();
        let total: f64 = full_spectrum(&ens).iter().map(|l| l.max(0.0)).sum();
        for &(k, e) in &curve {
            let rm = rmsre(&ens, &compress_rank(&ens, k).unwrap()).unwrap();
            prop_assert!((e - (1.0 - rm * rm * m as f64 / total)).abs() < 1e-8);
        }
        prop_assert_eq!(curve.last().unwrap().1, 1.0);
        prop_assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn factors_have_orthonormal_basis(seed in any::<u64>(), n in 2usize..15, m in 1usize..4, tau in 0.05f64..=1.0) {
        let mut r = rng(seed);
        let ens = random_ensemble(&mut r, n, m);
        let f = compress(&ens, tau).unwrap();
        prop_assert_eq!(f.k, rank_for_tau(n, tau).unwrap());
        prop_assert!((f.u.transpose() * &f.u - DMatrix::identity(f.k, f.k)).amax() < 1e-10);
        prop_assert_eq!(f.stored_scalar_count(), n * f.k + m * n * f.k);
    }

    #[test]
    fn glram_history_never_increases(seed in any::<u64>(), n in 3usize..10, m in 1usize..5, k_frac in 0.0f64..1.0) {
        let mut r = rng(seed);
        let ens = random_ensemble(&mut r, n, m);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let g = glram_compress(&ens, k, 200, 1e-12).unwrap();
        prop_assert!(g.rmsre_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!((g.l.transpose() * &g.l - DMatrix::identity(k, k)).amax() < 1e-10);
        prop_assert!((g.r.transpose() * &g.r - DMatrix::identity(k, k)).amax() < 1e-10);
    }
}

#[test]
fn rank_one_example() {
    let e1 = SparseMatrix::from_triplets(4, 4, &[(0, 0, 1.0)]).unwrap();
    let f = compress(&[e1.clone()], 0.25).unwrap();
    assert_eq!(f.k, 1);
    assert!((f.u[(0, 0)].abs() - 1.0).abs() < 1e-14);
    assert!(rmsre(&[e1], &f).unwrap() < 1e-14);
}

#[test]
fn hand_checked_rmsre() {
    let a = SparseMatrix::from_diagonal(&[0.0, 1.0]);
    let f = LowRankFactors {
        u: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        w: vec![DMatrix::from_row_slice(1, 2, &[0.0, 0.0])],
        k: 1,
        tau: 0.5,
    };
    assert!((rmsre(&[a], &f).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn exact_rank_ensembles() {
    let mut r = rng(11);
    let ens = low_rank_ensemble(&mut r, 6, 3, 2);
    let f = compress_rank(&ens, 6).unwrap();
    assert!(rmsre(&ens, &f).unwrap() < 1e-9);
    let g = glram_compress(&low_rank_ensemble(&mut r, 8, 1, 3), 3, 50, 1e-14).unwrap();
    assert!(g.rmsre() < 1e-8);
}

#[test]
fn rank_rounding_and_rejection() {
    assert_eq!(rank_for_tau(665, 585.0 / 665.0).unwrap(), 585);
    assert_eq!(rank_for_tau(10, 0.25).unwrap(), 3);
    assert!(rank_for_tau(10, 0.0).is_err());
    assert!(rank_for_tau(10, 1.5).is_err());
}

#[test]
fn compression_ratio_formula() {
    for (n, k, m) in [(10, 3, 1), (121, 81, 100), (665, 585, 200)] {
        let expect = k as f64 / n as f64 * (1.0 + 1.0 / m as f64);
        assert!((compression_ratio(n, k, m) - expect).abs() < 1e-12);
    }
}

#[test]
fn zero_ensemble_energy_is_flagged() {
    let z = vec![SparseMatrix::zeros(3, 3); 2];
    assert!(matches!(energy_ratio(&z, EnergyConvention::Eigen), Err(Error::ZeroEnsemble)));
}

#[test]
fn factors_file_round_trip() {
    let mut r = rng(5);
    let ens = random_ensemble(&mut r, 5, 2);
    let f = compress(&ens, 0.6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("factors.bin");
    save_factors(&path, &f).unwrap();
    assert_eq!(load_factors(&path).unwrap(), f);
}
