use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::line_search::{strong_wolfe, LineSearchParams};
use super::ReducedControlProblem;
use crate::error::{Error, Result};
use crate::numerics::cholesky::factorize_spd_dense;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SteepestDescent,
    StochasticGradient,
    Newton,
    Bfgs,
    TrustRegionDogleg,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SteepestDescent,
        Method::StochasticGradient,
        Method::Newton,
        Method::Bfgs,
        Method::TrustRegionDogleg,
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SteepestDescent => "sdm",
            Method::StochasticGradient => "sgd",
            Method::Newton => "newton",
            Method::Bfgs => "bfgs",
            Method::TrustRegionDogleg => "trm",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdm" | "steepest-descent" => Ok(Method::SteepestDescent),
            "sgd" => Ok(Method::StochasticGradient),
            "newton" => Ok(Method::Newton),
            "bfgs" => Ok(Method::Bfgs),
            "trm" | "trust-region" | "dogleg" => Ok(Method::TrustRegionDogleg),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub method: Method,
    pub epsilon_grad: f64,
    pub max_outer_iters: usize,
    pub line_search: LineSearchParams,
    pub sgd_batch: usize,
    /// `α_k = α₀ / (1 + k / sgd_decay)`.
    pub sgd_decay: f64,
    /// Iterations between full-gradient convergence checks.
    pub sgd_check_every: usize,
    pub sgd_seed: u64,
    pub tr_radius: f64,
    pub tr_max_radius: f64,
    pub tr_expand: f64,
    pub tr_shrink: f64,
    pub tr_accept: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            method: Method::Newton,
            epsilon_grad: 1e-3,
            max_outer_iters: 2000,
            line_search: LineSearchParams::default(),
            sgd_batch: 1,
            sgd_decay: 20.0,
            sgd_check_every: 10,
            sgd_seed: 0,
            tr_radius: 1.0,
            tr_max_radius: 1e8,
            tr_expand: 2.0,
            tr_shrink: 0.25,
            tr_accept: 0.1,
        }
    }
}

impl OptimizerSpec {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(0.0 < ls.c1 && ls.c1 < ls.c2 && ls.c2 < 1.0) {
            return bad("line search needs 0 < c1 < c2 < 1");
        }
        if !(self.epsilon_grad > 0.0) {
            return bad("epsilon_grad must be positive");
        }
        if self.sgd_batch == 0 || self.sgd_check_every == 0 || !(self.sgd_decay > 0.0) {
            return bad("SGD batch, check interval and decay must be positive");
        }
        if !(self.tr_radius > 0.0 && self.tr_expand > 1.0 && self.tr_shrink > 0.0 && self.tr_shrink < 1.0) {
            return bad("trust region needs radius > 0, expand > 1, 0 < shrink < 1");
        }
        if !(0.0..0.25).contains(&self.tr_accept) {
            return bad("trust region acceptance threshold must lie in [0, 0.25)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    /// Euclidean length of the accepted update; zero for the starting point.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SocpResult {
    pub method: Method,
    pub f_star: DVector<f64>,
    pub mu_star: DVector<f64>,
    pub j0: f64,
    pub j_star: f64,
    pub grad_norm_final: f64,
    pub iterations: usize,
    /// `false` when the iteration cap was hit; `f_star` is then the best iterate.
    pub converged: bool,
    pub history: Vec<IterRecord>,
    /// Entries of `f_star` below zero (the admissible set asks for `f ≥ 0`).
    pub negative_components: usize,
    pub elapsed: Duration,
}

impl SocpResult {
    pub fn ratio(&self) -> f64 {
        self.j_star / self.j0
    }
}

struct State {
    f: DVector<f64>,
    j: f64,
    g: DVector<f64>,
}

struct Tracker {
    history: Vec<IterRecord>,
    best: (f64, DVector<f64>, f64),
}

impl Tracker {
    fn new(s: &State) -> Self {
        Self {
            history: vec![IterRecord {
                iter: 0,
                j: s.j,
                grad_norm: s.g.norm(),
                step: 0.0,
            }],
            best: (s.j, s.f.clone(), s.g.norm()),
        }
    }

    fn record(&mut self, s: &State, step: f64) {
        let grad_norm = s.g.norm();
        self.history.push(IterRecord {
            iter: self.history.len(),
            j: s.j,
            grad_norm,
            step,
        });
        if s.j < self.best.0 {
            self.best = (s.j, s.f.clone(), grad_norm);
        }
    }
}

/// Minimizes `Ĵ` from `f0` with the method selected in `spec`.
pub fn optimize(p: &ReducedControlProblem, spec: &OptimizerSpec, f0: &DVector<f64>) -> Result<SocpResult> {
    spec.validate()?;
    let start = Instant::now();
    let (j0, g0) = p.value_and_gradient(f0)?;
    if !j0.is_finite() {
        return Err(Error::InvalidArgument("objective is not finite at the initial control".into()));
    }
    let mut state = State {
        f: f0.clone(),
        j: j0,
        g: g0,
    };
    let mut tracker = Tracker::new(&state);
    let converged = match spec.method {
        Method::SteepestDescent => line_search_method(p, spec, &mut state, &mut tracker, Direction::Steepest)?,
        Method::Newton => line_search_method(p, spec, &mut state, &mut tracker, Direction::Newton)?,
        Method::Bfgs => line_search_method(p, spec, &mut state, &mut tracker, Direction::Bfgs)?,
        Method::StochasticGradient => sgd(p, spec, &mut state, &mut tracker)?,
        Method::TrustRegionDogleg => dogleg(p, spec, &mut state, &mut tracker)?,
    };
    let (f_star, j_star, grad_norm_final) = if converged {
        (state.f, state.j, state.g.norm())
    } else {
        let (j, f, g) = tracker.best;
        (f, j, g)
    };
    let mu_star = p.mean_state(&f_star)?;
    Ok(SocpResult {
        method: spec.method,
        negative_components: f_star.iter().filter(|&&v| v < 0.0).count(),
        mu_star,
        f_star,
        j0,
        j_star,
        grad_norm_final,
        iterations: tracker.history.len() - 1,
        converged,
        history: tracker.history,
        elapsed: start.elapsed(),
    })
}

enum Direction {
    Steepest,
    Newton,
    Bfgs,
}

fn line_search_method(
    p: &ReducedControlProblem,
    spec: &OptimizerSpec,
    s: &mut State,
    tracker: &mut Tracker,
    kind: Direction,
) -> Result<bool> {
    let n = p.n();
    let newton = match kind {
        Direction::Newton => Some(factorize_spd_dense(p.hessian()?)?),
        _ => None,
    };
    let mut inv_h: Option<DMatrix<f64>> = None;
    let mut prev_slope: Option<(f64, f64)> = None;

    for iter in 0..spec.max_outer_iters {
        if s.g.norm() <= spec.epsilon_grad {
            return Ok(true);
        }
        let d = match kind {
            Direction::Steepest => -&s.g,
            Direction::Newton => -newton.as_ref().expect("factored").solve(&s.g),
            Direction::Bfgs => match &inv_h {
                Some(h) => -(h * &s.g),
                None => -&s.g,
            },
        };
        let slope = s.g.dot(&d);
        let alpha_init = match (&kind, prev_slope) {
            (Direction::Newton, _) => 1.0,
            (Direction::Bfgs, _) if inv_h.is_some() => 1.0,
            // first step: aim for a unit-length move; afterwards reuse the last
            // step's first-order decrease
            (_, None) => 1.0 / s.g.norm(),
            (_, Some((alpha, last_slope))) => (alpha * last_slope / slope).max(f64::MIN_POSITIVE),
        };
        let ls = strong_wolfe(
            |alpha| p.value_and_gradient(&(&s.f + &d * alpha)),
            &d,
            s.j,
            slope,
            alpha_init,
            &spec.line_search,
            iter,
        )?;
        let step = &d * ls.alpha;
        let y = &ls.gradient - &s.g;
        s.f += &step;
        s.j = ls.value;
        s.g = ls.gradient;
        prev_slope = Some((ls.alpha, slope));
        tracker.record(s, step.norm());

        if let Direction::Bfgs = kind {
            let sy = step.dot(&y);
            if sy > 0.0 {
                let h = inv_h.get_or_insert_with(|| DMatrix::identity(n, n) * (sy / y.dot(&y)));
                let rho = 1.0 / sy;
                let hy = &*h * &y;
                let yhy = y.dot(&hy);
                // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded
                *h += (&step * step.transpose()) * (rho * rho * yhy + rho)
                    - (&hy * step.transpose() + &step * hy.transpose()) * rho;
            }
        }
    }
    Ok(s.g.norm() <= spec.epsilon_grad)
}

fn sgd(p: &ReducedControlProblem, spec: &OptimizerSpec, s: &mut State, tracker: &mut Tracker) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sgd_seed);
    let batch_size = spec.sgd_batch.min(p.m());
    let batch_grad = |rng: &mut ChaCha8Rng, f: &DVector<f64>| {
        let batch: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..p.m())).collect();
        let mut value = 0.0;
        let mut grad = DVector::zeros(p.n());
        for &m in &batch {
            let (v, g) = p.sample_value_and_gradient(m, f);
            value += v;
            grad += g;
        }
        let scale = 1.0 / batch.len() as f64;
        (batch, value * scale, grad * scale)
    };
    let batch_value = |batch: &[usize], f: &DVector<f64>| {
        let reg = 0.5 * p.beta() * f.dot(&p.phi().mul_vec(f));
        batch.iter().map(|&m| p.sample_mismatch(m, f)).sum::<f64>() / batch.len() as f64 + reg
    };

    if s.g.norm() <= spec.epsilon_grad {
        return Ok(true);
    }
    let alpha_cap = 1.0 / curvature_bound(p, &s.f, &s.g)?;
    let mut alpha0 = None;
    for k in 0..spec.max_outer_iters {
        let (batch, value, g) = batch_grad(&mut rng, &s.f);
        let gg = g.dot(&g);
        if gg == 0.0 {
            continue;
        }
        let alpha0 = *alpha0.get_or_insert_with(|| {
            // backtrack from min(2J/‖g‖², 1/L) until Armijo holds on this batch;
            // 2J/‖g‖² bounds the exact minimizing step of a nonnegative quadratic
            // along g, 1/L keeps every other direction stable
            let mut alpha = (2.0 * value / gg).min(alpha_cap);
            for _ in 0..spec.line_search.max_trials {
                let trial = &s.f - &g * alpha;
                if batch_value(&batch, &trial) <= value - spec.line_search.c1 * alpha * gg {
                    break;
                }
                alpha *= 0.5;
            }
            alpha
        });
        let alpha = alpha0 / (1.0 + k as f64 / spec.sgd_decay);
        let step = &g * alpha;
        s.f -= &step;
        let (j, full) = p.value_and_gradient(&s.f)?;
        s.j = j;
        s.g = full;
        tracker.record(s, step.norm());
        if (k + 1) % spec.sgd_check_every == 0 && s.g.norm() <= spec.epsilon_grad {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Largest eigenvalue of the Hessian by power iteration on gradient
/// differences `∇Ĵ(f + v) − ∇Ĵ(f)`, which are exact Hessian products here.
fn curvature_bound(p: &ReducedControlProblem, f: &DVector<f64>, g: &DVector<f64>) -> Result<f64> {
    const POWER_ITERS: usize = 20;
    let mut v = g.normalize();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let hv = p.gradient(&(f + &v))? - g;
        lambda = v.dot(&hv);
        let norm = hv.norm();
        if norm == 0.0 {
            break;
        }
        v = hv / norm;
    }
    Ok(lambda.max(f64::MIN_POSITIVE))
}

fn dogleg(p: &ReducedControlProblem, spec: &OptimizerSpec, s: &mut State, tracker: &mut Tracker) -> Result<bool> {
    let h = p.hessian()?;
    let chol = factorize_spd_dense(h)?;
    let mut radius = spec.tr_radius;
    for _ in 0..spec.max_outer_iters {
        if s.g.norm() <= spec.epsilon_grad {
            return Ok(true);
        }
        let newton = -chol.solve(&s.g);
        let hg = h * &s.g;
        let gg = s.g.dot(&s.g);
        let cauchy = &s.g * (-gg / s.g.dot(&hg));
        let step = if newton.norm() <= radius {
            newton
        } else if cauchy.norm() >= radius {
            &s.g * (-radius / s.g.norm())
        } else {
            // boundary point on the segment from the Cauchy point to the Newton point
            let diff = &newton - &cauchy;
            let a = diff.dot(&diff);
            let b = 2.0 * cauchy.dot(&diff);
            let c = cauchy.dot(&cauchy) - radius * radius;
            let t = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
            &cauchy + diff * t
        };
        let predicted = -(s.g.dot(&step) + 0.5 * step.dot(&(h * &step)));
        let f_new = &s.f + &step;
        let (j_new, g_new) = p.value_and_gradient(&f_new)?;
        let actual = s.j - j_new;
        let rho = if predicted > 0.0 { actual / predicted } else { 0.0 };
        let step_norm = step.norm();
        if rho < 0.25 {
            radius *= spec.tr_shrink;
        } else if rho > 0.75 && (step_norm - radius).abs() <= 1e-12 * radius {
            radius = (radius * spec.tr_expand).min(spec.tr_max_radius);
        }
        if rho > spec.tr_accept {
            s.f = f_new;
            s.j = j_new;
            s.g = g_new;
            tracker.record(s, step_norm);
        } else {
            tracker.record(s, 0.0);
        }
    }
    Ok(s.g.norm() <= spec.epsilon_grad)
}
