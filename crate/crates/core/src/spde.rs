//! Monte-Carlo FEM for `−∇·(a ∇u) = 1` with `a = 1 + ε σ`, solved through the
//! low-rank ensemble machinery, plus the rank and sample-size diagnostics.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::fem::{self, AssembledSystem, FieldDistribution, TriMesh};
use crate::lowrank::{
    compression_ratio, energy_curve, rank_for_tau, rmsre, EnergyConvention, EnergyCurve,
    LowRankBasis, LowRankFactors,
};
use crate::numerics::condition_estimate;
use crate::perturbed_solver::{
    solve_direct, solve_neumann, EnsembleSolution, PerturbedEnsemble, SmwSolver, SolveMethod,
};

/// `e(k)` threshold defining the numerical rank of the N-matrix.
pub const CRITICAL_ENERGY_GAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpdeRunConfig {
    pub h: f64,
    pub m: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub distribution: FieldDistribution,
    pub master_seed: u64,
    pub method: SolveMethod,
    /// Also run the per-sample direct solve and report the QoI error.
    pub reference: bool,
    /// Solve samples with singular capacitance directly instead of failing.
    pub direct_fallback: bool,
    pub energy_convention: EnergyConvention,
    /// Number of leading samples whose `Ā + Ã_m` condition number is estimated.
    pub condition_samples: usize,
}

impl Default for SpdeRunConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            m: 100,
            tau: 1.0,
            epsilon: 0.2,
            distribution: FieldDistribution::StandardNormal,
            master_seed: 42,
            method: SolveMethod::Smw,
            reference: true,
            direct_fallback: false,
            energy_convention: EnergyConvention::Eigen,
            condition_samples: 0,
        }
    }
}

impl SpdeRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau = {} is outside (0, 1]", self.tau)));
        }
        if self.m == 0 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(Error::InvalidH(self.h));
        }
        Ok(())
    }
}

/// Mesh, samples, matrices and the N-matrix eigenbasis of one experiment.
pub struct SpdeProblem {
    pub mesh: TriMesh,
    pub system: AssembledSystem,
    pub ensemble: PerturbedEnsemble,
    pub basis: LowRankBasis,
    pub assembly_time: Duration,
    pub basis_time: Duration,
}

impl SpdeProblem {
    pub fn build(
        h: f64,
        m: usize,
        epsilon: f64,
        distribution: FieldDistribution,
        master_seed: u64,
    ) -> Result<Self> {
        let start = Instant::now();
        let mesh = fem::structured_mesh(h)?;
        let fields = fem::sample_fields(mesh.num_elements(), m, epsilon, distribution, master_seed)?;
        let system = fem::assemble(&mesh, &fields, |_, _| 1.0)?;
        let ensemble =
            PerturbedEnsemble::new(system.abar.clone(), system.atilde.clone(), system.load.clone())?;
        let assembly_time = start.elapsed();
        let start = Instant::now();
        let basis = LowRankBasis::new(&ensemble.perturbations)?;
        Ok(Self {
            mesh,
            system,
            ensemble,
            basis,
            assembly_time,
            basis_time: start.elapsed(),
        })
    }

    pub fn from_config(cfg: &SpdeRunConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg.h, cfg.m, cfg.epsilon, cfg.distribution, cfg.master_seed)
    }

    pub fn n(&self) -> usize {
        self.ensemble.n()
    }

    pub fn factors(&self, k: usize) -> Result<LowRankFactors> {
        self.basis.factors(&self.ensemble.perturbations, k)
    }

    pub fn reference(&self) -> Result<EnsembleSolution> {
        solve_direct(&self.ensemble)
    }

    /// SMW solve at rank `k`.
    pub fn solve_smw(&self, k: usize, direct_fallback: bool) -> Result<EnsembleSolution> {
        let solver = SmwSolver::new(&self.ensemble.abar, self.factors(k)?)?;
        solver.solve_all(&self.ensemble.b, Some(&self.ensemble), direct_fallback)
    }

    pub fn energy(&self, convention: EnergyConvention) -> Result<EnergyCurve> {
        energy_curve(self.basis.eigenvalues(), convention)
    }

    /// `(k*, k*/N)` from the plain energy curve.
    pub fn critical_tau(&self) -> Result<(usize, f64)> {
        critical_from_eigenvalues(self.basis.eigenvalues())
    }
}

/// Phase timings, reported in the manifest but never in data files.
#[derive(Debug, Clone, Default)]
pub struct PhaseTimings {
    pub assembly: Duration,
    pub compression: Duration,
    pub solve: Duration,
    pub reference: Duration,
}

#[derive(Debug, Clone)]
pub struct SpdeReport {
    pub n: usize,
    pub k: usize,
    pub num_boundary: usize,
    pub ubar: DVector<f64>,
    /// Missing when the solve failed; see `failure`.
    pub qoi_lram: Option<DVector<f64>>,
    pub qoi_reference: Option<DVector<f64>>,
    pub err_l2: Option<f64>,
    pub rmsre: f64,
    pub compression_ratio: f64,
    pub eigenvalues: Vec<f64>,
    pub energy_curve: EnergyCurve,
    pub k_star: usize,
    pub tau_star: f64,
    pub cond_abar: f64,
    pub sample_conditions: Vec<f64>,
    pub min_coefficient: f64,
    pub fallbacks: Vec<usize>,
    pub neumann_residual_max: Option<f64>,
    pub failure: Option<String>,
    pub timings: PhaseTimings,
}

/// Runs the whole pipeline for one configuration.
pub fn run_spde(cfg: &SpdeRunConfig) -> Result<SpdeReport> {
    let problem = SpdeProblem::from_config(cfg)?;
    run_on_problem(cfg, &problem)
}

pub fn run_on_problem(cfg: &SpdeRunConfig, problem: &SpdeProblem) -> Result<SpdeReport> {
    let n = problem.n();
    let mut timings = PhaseTimings {
        assembly: problem.assembly_time,
        ..PhaseTimings::default()
    };

    let start = Instant::now();
    let k = rank_for_tau(n, cfg.tau)?;
    let mut factors = problem.factors(k)?;
    factors.tau = cfg.tau;
    let err_rec = rmsre(&problem.ensemble.perturbations, &factors)?;
    timings.compression = problem.basis_time + start.elapsed();

    let start = Instant::now();
    let ubar = fem_ubar(problem)?;
    let solved = match cfg.method {
        SolveMethod::Smw => SmwSolver::new(&problem.ensemble.abar, factors.clone())
            .and_then(|s| s.solve_all(&problem.ensemble.b, Some(&problem.ensemble), cfg.direct_fallback)),
        SolveMethod::Neumann(order) => solve_neumann(&problem.ensemble, &factors, order, false),
        SolveMethod::Direct => solve_direct(&problem.ensemble),
    };
    timings.solve = start.elapsed();
    let (solution, failure) = match solved {
        Ok(s) => (Some(s), None),
        Err(e @ (Error::SingularCapacitance { .. } | Error::DivergenceRisk { .. } | Error::SingularSample { .. })) => {
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };

    let start = Instant::now();
    let reference = if cfg.reference {
        Some(problem.reference()?)
    } else {
        None
    };
    timings.reference = start.elapsed();

    let err_l2 = match (&solution, &reference) {
        (Some(s), Some(r)) => Some((&s.qoi - &r.qoi).norm()),
        _ => None,
    };
    // a vanishing ensemble has numerical rank zero and no energy curve
    let (k_star, tau_star) = match problem.critical_tau() {
        Err(Error::ZeroEnsemble) => (0, 0.0),
        other => other?,
    };
    let energy = match problem.energy(cfg.energy_convention) {
        Err(Error::ZeroEnsemble) => Vec::new(),
        other => other?,
    };
    let sample_conditions = (0..cfg.condition_samples.min(problem.ensemble.m()))
        .map(|m| {
            let a = problem
                .ensemble
                .abar
                .add_scaled(1.0, &problem.ensemble.perturbations[m], 1.0)?;
            condition_estimate(&a)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SpdeReport {
        n,
        k,
        num_boundary: problem.mesh.num_boundary(),
        ubar,
        qoi_lram: solution.as_ref().map(|s| s.qoi.clone()),
        qoi_reference: reference.map(|r| r.qoi),
        err_l2,
        rmsre: err_rec,
        compression_ratio: compression_ratio(n, k, problem.ensemble.m()),
        eigenvalues: problem.basis.eigenvalues().to_vec(),
        energy_curve: energy,
        k_star,
        tau_star,
        cond_abar: condition_estimate(&problem.ensemble.abar)?,
        sample_conditions,
        min_coefficient: problem
            .system
            .min_coefficient
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
        fallbacks: solution.as_ref().map(|s| s.fallbacks.clone()).unwrap_or_default(),
        neumann_residual_max: solution
            .as_ref()
            .filter(|s| !s.neumann_residuals.is_empty())
            .map(|s| s.neumann_residuals.iter().copied().fold(0.0, f64::max)),
        failure,
        timings,
    })
}

fn fem_ubar(problem: &SpdeProblem) -> Result<DVector<f64>> {
    Ok(crate::numerics::factorize_spd(&problem.ensemble.abar)?.solve(&problem.ensemble.b))
}

/// Smallest `k` with `e(k) ≥ 1 − 10⁻¹²` on plain eigenvalue partial sums.
pub fn critical_from_eigenvalues(eigenvalues: &[f64]) -> Result<(usize, f64)> {
    let curve = energy_curve(eigenvalues, EnergyConvention::Eigen)?;
    let n = eigenvalues.len();
    let k = curve
        .iter()
        .find(|(_, e)| *e >= 1.0 - CRITICAL_ENERGY_GAP)
        .map(|(k, _)| *k)
        .unwrap_or(n);
    Ok((k, k as f64 / n as f64))
}

/// `(k*, τ*)` for an arbitrary ensemble.
pub fn critical_tau(ensemble: &[crate::numerics::SparseMatrix]) -> Result<(usize, f64)> {
    if ensemble.iter().all(|a| a.values().iter().all(|&v| v == 0.0)) {
        crate::lowrank::ensemble_dim(ensemble)?;
        return Err(Error::ZeroEnsemble);
    }
    critical_from_eigenvalues(LowRankBasis::new(ensemble)?.eigenvalues())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub k: usize,
    pub tau: f64,
    pub err_l2: f64,
    pub rmsre: f64,
    pub compression_ratio: f64,
}

/// SMW QoI error against `reference` for each rank in `ks`.
pub fn error_scan(problem: &SpdeProblem, reference: &DVector<f64>, ks: &[usize]) -> Result<Vec<ScanRow>> {
    let n = problem.n();
    ks.iter()
        .map(|&k| {
            let factors = problem.factors(k)?;
            let rec = rmsre(&problem.ensemble.perturbations, &factors)?;
            let solver = SmwSolver::new(&problem.ensemble.abar, factors)?;
            let sol = solver.solve_all(&problem.ensemble.b, None, false)?;
            Ok(ScanRow {
                k,
                tau: k as f64 / n as f64,
                err_l2: (&sol.qoi - reference).norm(),
                rmsre: rec,
                compression_ratio: compression_ratio(n, k, problem.ensemble.m()),
            })
        })
        .collect()
}

/// Same as [`error_scan`] but keyed by `τ`, with `k = ⌈τN⌉`.
pub fn tau_scan(problem: &SpdeProblem, reference: &DVector<f64>, taus: &[f64]) -> Result<Vec<ScanRow>> {
    let n = problem.n();
    let ks = taus
        .iter()
        .map(|&t| rank_for_tau(n, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = error_scan(problem, reference, &ks)?;
    for (row, &t) in rows.iter_mut().zip(taus) {
        row.tau = t;
    }
    Ok(rows)
}

/// Rank at which the scan's error falls by the largest factor relative to
/// the previous entry. Rows are taken in the order given.
pub fn transition_rank(rows: &[ScanRow]) -> Option<usize> {
    const FLOOR: f64 = f64::MIN_POSITIVE;
    rows.windows(2)
        .map(|w| (w[1].k, w[0].err_l2.max(FLOOR) / w[1].err_l2.max(FLOOR)))
        .fold(None, |best: Option<(usize, f64)>, (k, drop)| match best {
            Some((_, d)) if d >= drop => best,
            _ => Some((k, drop)),
        })
        .map(|(k, _)| k)
}

#[derive(Debug, Clone)]
pub struct McStudyConfig {
    pub h: f64,
    pub epsilon: f64,
    pub distribution: FieldDistribution,
    pub master_seed: u64,
    pub repetitions: usize,
    pub m_reference: usize,
}

impl Default for McStudyConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            epsilon: 0.2,
            distribution: FieldDistribution::StandardNormal,
            master_seed: 42,
            repetitions: 10,
            m_reference: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McRow {
    pub m: usize,
    pub mean_err: f64,
    pub rep_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct McStudy {
    pub rows: Vec<McRow>,
    /// Least-squares slope of `ln(mean_err)` against `ln(M)` over rows with a positive error.
    pub slope: f64,
}

/// Per-sample direct solutions for samples `0..count` of one seed.
fn direct_samples(cfg: &McStudyConfig, seed: u64, count: usize) -> Result<Vec<DVector<f64>>> {
    let mesh = fem::structured_mesh(cfg.h)?;
    let fields = fem::sample_fields(mesh.num_elements(), count, cfg.epsilon, cfg.distribution, seed)?;
    let system = fem::assemble(&mesh, &fields, |_, _| 1.0)?;
    let ens = PerturbedEnsemble::new(system.abar, system.atilde, system.load)?;
    Ok(solve_direct(&ens)?.samples)
}

/// QoI error against a high-`M` reference. Repetition `r` uses seed
/// `master_seed + r`; the estimate at `M` is the mean of that seed's first `M`
/// samples. The reference uses `master_seed` with `m_reference` samples.
pub fn mc_convergence_study(cfg: &McStudyConfig, m_list: &[usize]) -> Result<McStudy> {
    if m_list.is_empty() || cfg.repetitions == 0 {
        return Err(Error::EmptyInput);
    }
    if m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] == 0 {
        return Err(Error::InvalidArgument("M list must be positive and ascending".into()));
    }
    let m_max = *m_list.last().expect("nonempty");
    let reference = crate::perturbed_solver::qoi_mean(&direct_samples(cfg, cfg.master_seed, cfg.m_reference)?)?;

    let mut rep_errors = vec![Vec::with_capacity(cfg.repetitions); m_list.len()];
    for r in 0..cfg.repetitions {
        let samples = direct_samples(cfg, cfg.master_seed.wrapping_add(r as u64), m_max)?;
        let mut acc = DVector::zeros(reference.len());
        let mut next = 0;
        for (row, &m) in m_list.iter().enumerate() {
            for s in &samples[next..m] {
                acc += s;
            }
            next = m;
            let mean = &acc / m as f64;
            rep_errors[row].push((mean - &reference).norm());
        }
    }
    let rows: Vec<McRow> = m_list
        .iter()
        .zip(rep_errors)
        .map(|(&m, errs)| McRow {
            m,
            mean_err: errs.iter().sum::<f64>() / errs.len() as f64,
            rep_errors: errs,
        })
        .collect();
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_err > 0.0)
        .map(|r| ((r.m as f64).ln(), r.mean_err.ln()))
        .collect();
    Ok(McStudy {
        slope: least_squares_slope(&points),
        rows,
    })
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, err: f64) -> ScanRow {
        ScanRow {
            k,
            tau: 0.0,
            err_l2: err,
            rmsre: 0.0,
            compression_ratio: 0.0,
        }
    }

    #[test]
    fn transition_picks_largest_drop() {
        let rows = [row(1, 1.0), row(2, 0.5), row(3, 1e-12), row(4, 2e-13)];
        assert_eq!(transition_rank(&rows), Some(3));
        assert_eq!(transition_rank(&rows[..1]), None);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [25.0f64, 100.0, 400.0]
            .iter()
            .map(|m| (m.ln(), (3.0 * m.powf(-0.5)).ln()))
            .collect();
        assert!((least_squares_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn critical_rank_of_clean_spectrum() {
        assert_eq!(critical_from_eigenvalues(&[3.0, 1.0, 0.0, -1e-17]).unwrap(), (2, 0.5));
    }

    #[test]
    fn zero_epsilon_run_matches_ubar() {
        let cfg = SpdeRunConfig {
            h: 0.25,
            m: 3,
            epsilon: 0.0,
            tau: 0.5,
            ..SpdeRunConfig::default()
        };
        let report = run_spde(&cfg).unwrap();
        assert!(report.err_l2.unwrap() <= 1e-12);
        assert!((report.qoi_lram.unwrap() - &report.ubar).norm() <= 1e-12);
        assert_eq!(report.k_star, 0);
        assert!(report.energy_curve.is_empty());
    }
}
