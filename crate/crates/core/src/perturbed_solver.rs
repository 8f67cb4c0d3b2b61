//! Ensemble solves of `(Ā + Ã_m) u_m = b` via Sherman–Morrison–Woodbury on
//! low-rank factors, a truncated Neumann series, or per-sample factorization.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lowrank::{ensemble_dim, LowRankFactors};
use crate::numerics::dense::{dense_solve, spectral_norm_with, FnOperator};
use crate::numerics::{factorize_spd, SparseMatrix, SpdFactorization};

/// Power iterations used to bound `‖Ā⁻¹ U W_m‖₂` before a Neumann solve.
pub const NEUMANN_POWER_ITERS: usize = 20;

#[derive(Debug, Clone)]
pub struct PerturbedEnsemble {
    pub abar: SparseMatrix,
    pub perturbations: Vec<SparseMatrix>,
    pub b: DVector<f64>,
}

impl PerturbedEnsemble {
    pub fn new(abar: SparseMatrix, perturbations: Vec<SparseMatrix>, b: DVector<f64>) -> Result<Self> {
        let n = ensemble_dim(&perturbations)?;
        if abar.nrows() != n || abar.ncols() != n || b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "Ā is {}x{}, b has {} entries, perturbations are {n}x{n}",
                abar.nrows(),
                abar.ncols(),
                b.len()
            )));
        }
        Ok(Self {
            abar,
            perturbations,
            b,
        })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn m(&self) -> usize {
        self.perturbations.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Smw,
    Neumann(usize),
    Direct,
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveMethod::Smw => write!(f, "smw"),
            SolveMethod::Neumann(k) => write!(f, "neumann({k})"),
            SolveMethod::Direct => write!(f, "direct"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSolution {
    pub ubar: DVector<f64>,
    pub samples: Vec<DVector<f64>>,
    pub qoi: DVector<f64>,
    pub method: SolveMethod,
    /// Samples whose SMW capacitance was singular and were solved directly instead.
    pub fallbacks: Vec<usize>,
    /// Per-sample `‖(Ā⁻¹UW_m)^{K+1} ū‖₂`; empty unless the Neumann path ran.
    pub neumann_residuals: Vec<f64>,
}

impl EnsembleSolution {
    /// CSV with columns `node,ubar,qoi` and, if requested, `u_1..u_M`.
    pub fn write_csv<W: Write>(&self, out: &mut W, with_samples: bool) -> Result<()> {
        write!(out, "node,ubar,qoi")?;
        if with_samples {
            for m in 0..self.samples.len() {
                write!(out, ",u_{}", m + 1)?;
            }
        }
        writeln!(out)?;
        for i in 0..self.qoi.len() {
            write!(out, "{i},{:e},{:e}", self.ubar[i], self.qoi[i])?;
            if with_samples {
                for s in &self.samples {
                    write!(out, ",{:e}", s[i])?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Elementwise mean, summed in sample order.
pub fn qoi_mean(samples: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = samples.first().ok_or(Error::EmptyInput)?;
    let mut acc = DVector::zeros(first.len());
    for (m, s) in samples.iter().enumerate() {
        if s.len() != first.len() {
            return Err(Error::DimensionMismatch(format!(
                "sample {m} has length {}, expected {}",
                s.len(),
                first.len()
            )));
        }
        acc += s;
    }
    Ok(acc / samples.len() as f64)
}

/// Cached pieces of the SMW update: the factorization of `Ā` and `Ā⁻¹U`.
pub struct SmwSolver {
    abar: SpdFactorization,
    factors: LowRankFactors,
    ainv_u: DMatrix<f64>,
}

impl SmwSolver {
    pub fn new(abar: &SparseMatrix, factors: LowRankFactors) -> Result<Self> {
        if abar.nrows() != factors.n() || abar.ncols() != factors.n() {
            return Err(Error::DimensionMismatch(format!(
                "Ā is {}x{}, factors have N = {}",
                abar.nrows(),
                abar.ncols(),
                factors.n()
            )));
        }
        let abar = factorize_spd(abar)?;
        let ainv_u = abar.solve_many(&factors.u);
        Ok(Self {
            abar,
            factors,
            ainv_u,
        })
    }

    pub fn factors(&self) -> &LowRankFactors {
        &self.factors
    }

    pub fn abar(&self) -> &SpdFactorization {
        &self.abar
    }

    /// `Ā⁻¹ U` (N×k).
    pub fn ainv_u(&self) -> &DMatrix<f64> {
        &self.ainv_u
    }

    pub fn n(&self) -> usize {
        self.factors.n()
    }

    pub fn m(&self) -> usize {
        self.factors.m()
    }

    /// `Y_m = (I_k + W_m Ā⁻¹ U)⁻¹`.
    pub fn capacitance_inverse(&self, m: usize) -> Result<DMatrix<f64>> {
        let k = self.factors.k;
        let cap = DMatrix::identity(k, k) + &self.factors.w[m] * &self.ainv_u;
        dense_solve(&cap, &DMatrix::identity(k, k)).map_err(|e| match e {
            Error::Singular { condition } => Error::SingularCapacitance {
                sample: m,
                condition,
            },
            other => other,
        })
    }

    /// `(Ā + U W_m)⁻¹ r` given `y = Ā⁻¹ r` and `Y_m`.
    pub fn update(&self, m: usize, y_m: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let coeff = y_m * (&self.factors.w[m] * y);
        y - &self.ainv_u * coeff
    }

    /// `(Ā + U W_m)⁻ᵀ g` given `Y_m`.
    pub fn update_transpose(&self, m: usize, y_m: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
        let coeff = y_m.tr_mul(&self.ainv_u.tr_mul(g));
        let corrected = g - self.factors.w[m].tr_mul(&coeff);
        self.abar.solve(&corrected)
    }

    /// Solves every sample against the right-hand side `b`.
    ///
    /// With `direct_fallback`, a sample with singular capacitance is solved as
    /// `(Ā + Ã_m) u = b` from `ensemble` and listed in `fallbacks`; otherwise the
    /// first such sample is reported as an error.
    pub fn solve_all(
        &self,
        b: &DVector<f64>,
        ensemble: Option<&PerturbedEnsemble>,
        direct_fallback: bool,
    ) -> Result<EnsembleSolution> {
        let ubar = self.abar.solve(b);
        let results: Vec<Result<(DVector<f64>, bool)>> = (0..self.m())
            .into_par_iter()
            .map(|m| match self.capacitance_inverse(m) {
                Ok(y_m) => Ok((self.update(m, &y_m, &ubar), false)),
                Err(Error::SingularCapacitance { .. }) if direct_fallback && ensemble.is_some() => {
                    let ens = ensemble.expect("checked");
                    let a = ens.abar.add_scaled(1.0, &ens.perturbations[m], 1.0)?;
                    Ok((solve_one(&a, b, m)?, true))
                }
                Err(e) => Err(e),
            })
            .collect();
        let mut samples = Vec::with_capacity(self.m());
        let mut fallbacks = Vec::new();
        for (m, r) in results.into_iter().enumerate() {
            let (u, fell_back) = r?;
            if fell_back {
                fallbacks.push(m);
            }
            samples.push(u);
        }
        let qoi = qoi_mean(&samples)?;
        Ok(EnsembleSolution {
            ubar,
            samples,
            qoi,
            method: SolveMethod::Smw,
            fallbacks,
            neumann_residuals: Vec::new(),
        })
    }
}

fn check_factors(ens: &PerturbedEnsemble, factors: &LowRankFactors) -> Result<()> {
    if factors.n() != ens.n() || factors.m() != ens.m() {
        return Err(Error::DimensionMismatch(format!(
            "factors are for N = {}, M = {}; ensemble has N = {}, M = {}",
            factors.n(),
            factors.m(),
            ens.n(),
            ens.m()
        )));
    }
    Ok(())
}

/// `u^m = ū − Ā⁻¹U Y_m W_m ū` for every sample.
pub fn solve_smw(ens: &PerturbedEnsemble, factors: &LowRankFactors) -> Result<EnsembleSolution> {
    solve_smw_with(ens, factors, false)
}

pub fn solve_smw_with(
    ens: &PerturbedEnsemble,
    factors: &LowRankFactors,
    direct_fallback: bool,
) -> Result<EnsembleSolution> {
    check_factors(ens, factors)?;
    let solver = SmwSolver::new(&ens.abar, factors.clone())?;
    solver.solve_all(&ens.b, Some(ens), direct_fallback)
}

/// Truncated series `u^m = Σ_{j=0..K} (−Ā⁻¹UW_m)^j ū`.
///
/// Each sample is first screened with a short power iteration on `Ā⁻¹UW_m`;
/// an estimate `≥ 1` is refused with `DivergenceRisk` unless `force` is set.
pub fn solve_neumann(
    ens: &PerturbedEnsemble,
    factors: &LowRankFactors,
    order: usize,
    force: bool,
) -> Result<EnsembleSolution> {
    check_factors(ens, factors)?;
    let abar = factorize_spd(&ens.abar)?;
    let ainv_u = abar.solve_many(&factors.u);
    let ubar = abar.solve(&ens.b);
    let n = ens.n();

    let results: Vec<Result<(DVector<f64>, f64)>> = (0..ens.m())
        .into_par_iter()
        .map(|m| {
            let w = &factors.w[m];
            let apply = |x: &DVector<f64>| &ainv_u * (w * x);
            let op = FnOperator::new(n, n, apply, |x: &DVector<f64>| w.tr_mul(&ainv_u.tr_mul(x)));
            let norm = spectral_norm_with(&op, NEUMANN_POWER_ITERS, 0.0);
            if norm >= 1.0 && !force {
                return Err(Error::DivergenceRisk { sample: m, norm });
            }
            let mut term = ubar.clone();
            let mut sum = ubar.clone();
            for _ in 0..order {
                term = -apply(&term);
                sum += &term;
            }
            let residual = apply(&term).norm();
            Ok((sum, residual))
        })
        .collect();
    let mut samples = Vec::with_capacity(ens.m());
    let mut residuals = Vec::with_capacity(ens.m());
    for r in results {
        let (u, res) = r?;
        samples.push(u);
        residuals.push(res);
    }
    let qoi = qoi_mean(&samples)?;
    Ok(EnsembleSolution {
        ubar,
        samples,
        qoi,
        method: SolveMethod::Neumann(order),
        fallbacks: Vec::new(),
        neumann_residuals: residuals,
    })
}

fn solve_one(a: &SparseMatrix, b: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    if a.is_symmetric(1e-12 * a.frobenius_norm()) {
        if let Ok(f) = factorize_spd(a) {
            return Ok(f.solve(b));
        }
    }
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    match dense_solve(&a.to_dense(), &rhs) {
        Ok(x) => Ok(x.column(0).into_owned()),
        Err(Error::Singular { .. }) => Err(Error::SingularSample { sample: m }),
        Err(e) => Err(e),
    }
}

/// Factorizes and solves every `Ā + Ã_m` independently.
pub fn solve_direct(ens: &PerturbedEnsemble) -> Result<EnsembleSolution> {
    let ubar = factorize_spd(&ens.abar)?.solve(&ens.b);
    let samples = ens
        .perturbations
        .par_iter()
        .enumerate()
        .map(|(m, p)| {
            let a = ens.abar.add_scaled(1.0, p, 1.0)?;
            solve_one(&a, &ens.b, m)
        })
        .collect::<Result<Vec<_>>>()?;
    let qoi = qoi_mean(&samples)?;
    Ok(EnsembleSolution {
        ubar,
        samples,
        qoi,
        method: SolveMethod::Direct,
        fallbacks: Vec::new(),
        neumann_residuals: Vec::new(),
    })
}

/// Dispatches on `method`.
pub fn solve(
    ens: &PerturbedEnsemble,
    factors: Option<&LowRankFactors>,
    method: SolveMethod,
) -> Result<EnsembleSolution> {
    let need = || Error::InvalidArgument(format!("method {method} needs low-rank factors"));
    match method {
        SolveMethod::Direct => solve_direct(ens),
        SolveMethod::Smw => solve_smw(ens, factors.ok_or_else(need)?),
        SolveMethod::Neumann(k) => solve_neumann(ens, factors.ok_or_else(need)?, k, false),
    }
}
