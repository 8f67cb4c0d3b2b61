//! Reduced stochastic optimal-control problem: minimize over the control `f`
//!
//! `Ĵ(f) = (1/M) Σ_m ½ (Z_m f − t)ᵀ Φ (Z_m f − t) + (β/2) fᵀ Φ f`,
//!
//! where `Z_m f` solves `(Ā + U W_m) u = P Φ f` and `P` zeros boundary entries.

mod line_search;
mod optimize;

pub use line_search::{strong_wolfe, LineSearchParams, LineSearchResult};
pub use optimize::{optimize, IterRecord, Method, OptimizerSpec, SocpResult};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{self, quadrature, AssembledSystem, TriMesh};
use crate::lowrank::LowRankFactors;
use crate::numerics::SparseMatrix;
use crate::perturbed_solver::SmwSolver;

/// Largest `N` for which the dense Hessian is materialized.
pub const HESSIAN_LIMIT: usize = 5000;

/// Samples per partial sum in objective, gradient and Hessian reductions.
const REDUCE_CHUNK: usize = 8;

/// Desired state `U(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DesiredState {
    /// `sin(2πx) sin(2πy)`.
    #[default]
    SinSin,
    /// `sin(2πx) sin(2πx)`.
    SinSquared,
}

impl DesiredState {
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            DesiredState::SinSin => (2.0 * PI * x).sin() * (2.0 * PI * y).sin(),
            DesiredState::SinSquared => (2.0 * PI * x).sin().powi(2),
        }
    }
}

impl fmt::Display for DesiredState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesiredState::SinSin => "sin-sin",
            DesiredState::SinSquared => "sin-squared",
        })
    }
}

impl FromStr for DesiredState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin-sin" => Ok(DesiredState::SinSin),
            "sin-squared" => Ok(DesiredState::SinSquared),
            other => Err(Error::InvalidArgument(format!("unknown desired state '{other}'"))),
        }
    }
}

/// How the desired state enters the mismatch as a coefficient vector `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatePairing {
    /// `t` = nodal values of `U`.
    #[default]
    NodalInterpolant,
    /// `t = Φ⁻¹ (∫ U φ_j)_j`, the L² projection of `U` onto the P1 space.
    LoadProjection,
}

impl fmt::Display for StatePairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatePairing::NodalInterpolant => "nodal",
            StatePairing::LoadProjection => "projection",
        })
    }
}

impl FromStr for StatePairing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nodal" => Ok(StatePairing::NodalInterpolant),
            "projection" => Ok(StatePairing::LoadProjection),
            other => Err(Error::InvalidArgument(format!("unknown pairing '{other}'"))),
        }
    }
}

/// Inner product used for the state mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MismatchWeight {
    /// `rᵀ Φ r`.
    #[default]
    Mass,
    /// `rᵀ r` on nodal coefficients.
    Identity,
}

impl fmt::Display for MismatchWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MismatchWeight::Mass => "mass",
            MismatchWeight::Identity => "identity",
        })
    }
}

impl FromStr for MismatchWeight {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(MismatchWeight::Mass),
            "identity" => Ok(MismatchWeight::Identity),
            other => Err(Error::InvalidArgument(format!("unknown mismatch weight '{other}'"))),
        }
    }
}

pub struct ReducedControlProblem {
    phi: SparseMatrix,
    boundary: Vec<bool>,
    solver: SmwSolver,
    y: Vec<DMatrix<f64>>,
    target: DVector<f64>,
    uvec: DVector<f64>,
    beta: f64,
    weight: MismatchWeight,
    /// `(1/M) Σ Z_mᵀ K t`, with `K` the mismatch weight.
    linear_term: DVector<f64>,
    /// `(1/M) Σ ½ tᵀ K t`.
    constant_term: f64,
    hessian: OnceLock<DMatrix<f64>>,
}

impl ReducedControlProblem {
    /// General constructor. `boundary[i]` marks entries of `Φ f` dropped from
    /// the state equation's right-hand side.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        abar: &SparseMatrix,
        phi: SparseMatrix,
        boundary: Vec<bool>,
        factors: LowRankFactors,
        target: DVector<f64>,
        uvec: DVector<f64>,
        beta: f64,
        weight: MismatchWeight,
    ) -> Result<Self> {
        let n = factors.n();
        if phi.nrows() != n || phi.ncols() != n || boundary.len() != n || target.len() != n || uvec.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "control problem of size {n}: Φ is {}x{}, {} boundary flags, target {}, projection {}",
                phi.nrows(),
                phi.ncols(),
                boundary.len(),
                target.len(),
                uvec.len()
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta = {beta} must be positive")));
        }
        let solver = SmwSolver::new(abar, factors)?;
        let y = (0..solver.m())
            .into_par_iter()
            .map(|m| solver.capacitance_inverse(m))
            .collect::<Result<Vec<_>>>()?;
        let mut p = Self {
            phi,
            boundary,
            solver,
            y,
            target,
            uvec,
            beta,
            weight,
            linear_term: DVector::zeros(n),
            constant_term: 0.0,
            hessian: OnceLock::new(),
        };
        let kt = p.weigh(&p.target);
        p.constant_term = 0.5 * p.target.dot(&kt);
        let parts = p.ordered_sum(|m| p.apply_zt(m, &kt));
        p.linear_term = parts / p.m() as f64;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.solver.factors().k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn phi(&self) -> &SparseMatrix {
        &self.phi
    }

    /// Coefficient vector of the desired state used in the mismatch.
    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    /// `(∫ U φ_j)_j`.
    pub fn uvec(&self) -> &DVector<f64> {
        &self.uvec
    }

    pub fn weight(&self) -> MismatchWeight {
        self.weight
    }

    fn weigh(&self, r: &DVector<f64>) -> DVector<f64> {
        match self.weight {
            MismatchWeight::Mass => self.phi.mul_vec(r),
            MismatchWeight::Identity => r.clone(),
        }
    }

    fn mask(&self, v: &mut DVector<f64>) {
        for (i, &b) in self.boundary.iter().enumerate() {
            if b {
                v[i] = 0.0;
            }
        }
    }

    fn check(&self, f: &DVector<f64>) -> Result<()> {
        if f.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "control has {} entries, problem has {}",
                f.len(),
                self.n()
            )));
        }
        Ok(())
    }

    /// `Z_m f = (Ā + U W_m)⁻¹ P Φ f`.
    pub fn apply_z(&self, m: usize, f: &DVector<f64>) -> DVector<f64> {
        let mut rhs = self.phi.mul_vec(f);
        self.mask(&mut rhs);
        let y = self.solver.abar().solve(&rhs);
        self.solver.update(m, &self.y[m], &y)
    }

    /// `Z_mᵀ g = Φ P (Ā + U W_m)⁻ᵀ g`.
    pub fn apply_zt(&self, m: usize, g: &DVector<f64>) -> DVector<f64> {
        let mut v = self.solver.update_transpose(m, &self.y[m], g);
        self.mask(&mut v);
        self.phi.mul_vec(&v)
    }

    fn ordered_sum<F>(&self, term: F) -> DVector<f64>
    where
        F: Fn(usize) -> DVector<f64> + Sync,
    {
        let idx: Vec<usize> = (0..self.m()).collect();
        let partials: Vec<DVector<f64>> = idx
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut acc = DVector::zeros(self.n());
                for &m in chunk {
                    acc += term(m);
                }
                acc
            })
            .collect();
        let mut total = DVector::zeros(self.n());
        for p in &partials {
            total += p;
        }
        total
    }

    /// Mean state `(1/M) Σ Z_m f`.
    pub fn mean_state(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(f)?;
        Ok(self.ordered_sum(|m| self.apply_z(m, f)) / self.m() as f64)
    }

    /// Mismatch term of sample `m`, `½ (Z_m f − t)ᵀ K (Z_m f − t)`.
    pub fn sample_mismatch(&self, m: usize, f: &DVector<f64>) -> f64 {
        let r = self.apply_z(m, f) - &self.target;
        0.5 * r.dot(&self.weigh(&r))
    }

    fn regularization(&self, f: &DVector<f64>) -> (f64, DVector<f64>) {
        let pf = self.phi.mul_vec(f);
        (0.5 * self.beta * f.dot(&pf), pf * self.beta)
    }

    pub fn objective(&self, f: &DVector<f64>) -> Result<f64> {
        Ok(self.value_and_gradient(f)?.0)
    }

    pub fn gradient(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.value_and_gradient(f)?.1)
    }

    pub fn value_and_gradient(&self, f: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check(f)?;
        let idx: Vec<usize> = (0..self.m()).collect();
        let partials: Vec<(f64, DVector<f64>)> = idx
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut value = 0.0;
                let mut grad = DVector::zeros(self.n());
                for &m in chunk {
                    let r = self.apply_z(m, f) - &self.target;
                    let kr = self.weigh(&r);
                    value += 0.5 * r.dot(&kr);
                    grad += self.apply_zt(m, &kr);
                }
                (value, grad)
            })
            .collect();
        let mut value = 0.0;
        let mut grad = DVector::zeros(self.n());
        for (v, g) in &partials {
            value += v;
            grad += g;
        }
        let scale = 1.0 / self.m() as f64;
        let (reg, reg_grad) = self.regularization(f);
        Ok((value * scale + reg, grad * scale + reg_grad))
    }

    /// Objective and gradient of the single-sample functional
    /// `½ (Z_m f − t)ᵀ K (Z_m f − t) + (β/2) fᵀ Φ f`.
    pub fn sample_value_and_gradient(&self, m: usize, f: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = self.apply_z(m, f) - &self.target;
        let kr = self.weigh(&r);
        let (reg, reg_grad) = self.regularization(f);
        (0.5 * r.dot(&kr) + reg, self.apply_zt(m, &kr) + reg_grad)
    }

    /// `(1/M) Σ Z_mᵀ K t`, the right-hand side of the optimality system.
    pub fn linear_term(&self) -> &DVector<f64> {
        &self.linear_term
    }

    /// `Ĵ(0)`.
    pub fn constant_term(&self) -> f64 {
        self.constant_term
    }

    /// `(1/M) Σ Z_mᵀ K Z_m + β Φ`, computed once and cached.
    pub fn hessian(&self) -> Result<&DMatrix<f64>> {
        let n = self.n();
        if n > HESSIAN_LIMIT {
            return Err(Error::TooLarge {
                n,
                limit: HESSIAN_LIMIT,
            });
        }
        Ok(self.hessian.get_or_init(|| self.build_hessian()))
    }

    fn build_hessian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut pphi = self.phi.to_dense();
        for (i, &b) in self.boundary.iter().enumerate() {
            if b {
                pphi.row_mut(i).fill(0.0);
            }
        }
        // G = Ā⁻¹ P Φ, then Z_m = G − Ā⁻¹U Y_m W_m G
        let g = self.solver.abar().solve_many(&pphi);
        let factors = self.solver.factors();
        let ainv_u = self.solver.ainv_u();
        let idx: Vec<usize> = (0..self.m()).collect();
        let partials: Vec<DMatrix<f64>> = idx
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut acc = DMatrix::zeros(n, n);
                for &m in chunk {
                    let z = &g - ainv_u * (&self.y[m] * (&factors.w[m] * &g));
                    let kz = match self.weight {
                        MismatchWeight::Mass => self.phi.mul_dense(&z),
                        MismatchWeight::Identity => z.clone(),
                    };
                    acc += z.transpose() * kz;
                }
                acc
            })
            .collect();
        let mut h = DMatrix::zeros(n, n);
        for p in &partials {
            h += p;
        }
        h /= self.m() as f64;
        h += self.phi.to_dense() * self.beta;
        (&h + h.transpose()) * 0.5
    }
}

/// Builds the reduced problem on a FEM discretization.
pub fn build_reduced_problem(
    mesh: &TriMesh,
    assembled: &AssembledSystem,
    factors: LowRankFactors,
    desired: DesiredState,
    beta: f64,
    pairing: StatePairing,
    weight: MismatchWeight,
) -> Result<ReducedControlProblem> {
    let uvec = DVector::from_vec(quadrature::project_onto_basis(mesh, |x, y| desired.eval(x, y)));
    let target = match pairing {
        StatePairing::NodalInterpolant => fem::interpolate(mesh, |x, y| desired.eval(x, y)),
        StatePairing::LoadProjection => crate::numerics::factorize_spd(&assembled.phi)?.solve(&uvec),
    };
    ReducedControlProblem::new(
        &assembled.abar,
        assembled.phi.clone(),
        assembled.boundary.clone(),
        factors,
        target,
        uvec,
        beta,
        weight,
    )
}
