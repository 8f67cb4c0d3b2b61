//! Strong-Wolfe line search: bracketing by step expansion, then zoom with
//! safeguarded quadratic interpolation.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub c1: f64,
    pub c2: f64,
    pub max_trials: usize,
    pub expansion: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_trials: 50,
            expansion: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub trials: usize,
}

/// Finds `α` satisfying the strong Wolfe conditions along `d`.
///
/// `eval(α)` returns the objective and gradient at `x + α d`; `value0` and
/// `slope0 = ∇J(x)ᵀd` describe the start point. `iteration` only labels errors.
pub fn strong_wolfe<F>(
    mut eval: F,
    d: &DVector<f64>,
    value0: f64,
    slope0: f64,
    alpha_init: f64,
    params: &LineSearchParams,
    iteration: usize,
) -> Result<LineSearchResult>
where
    F: FnMut(f64) -> Result<(f64, DVector<f64>)>,
{
    let fail = |trials| Error::LineSearchFailed { iteration, trials };
    if !(slope0 < 0.0) || !alpha_init.is_finite() || alpha_init <= 0.0 {
        return Err(fail(0));
    }
    let (c1, c2) = (params.c1, params.c2);
    let armijo = |alpha: f64, value: f64| value <= value0 + c1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= -c2 * slope0;

    let mut trials = 0;
    let mut prev = (0.0, value0, slope0);
    let mut alpha = alpha_init;

    // bracketing phase
    let (mut lo, mut hi) = loop {
        if trials >= params.max_trials {
            return Err(fail(trials));
        }
        let (value, grad) = eval(alpha)?;
        trials += 1;
        if !value.is_finite() {
            // overshoot into a non-finite region: shrink toward the last good step
            alpha = 0.5 * (prev.0 + alpha);
            continue;
        }
        let slope = grad.dot(d);
        if !armijo(alpha, value) || (trials > 1 && value >= prev.1) {
            break (prev, (alpha, value, slope));
        }
        if curvature(slope) {
            return Ok(LineSearchResult {
                alpha,
                value,
                gradient: grad,
                trials,
            });
        }
        if slope >= 0.0 {
            break ((alpha, value, slope), prev);
        }
        prev = (alpha, value, slope);
        alpha *= params.expansion;
    };

    // zoom phase; `lo` always satisfies Armijo and has the lowest value seen
    loop {
        if trials >= params.max_trials {
            return Err(fail(trials));
        }
        let (a_lo, v_lo, s_lo) = lo;
        let (a_hi, v_hi, _) = hi;
        let width = a_hi - a_lo;
        let denom = 2.0 * (v_hi - v_lo - s_lo * width);
        let mut trial = if denom > 0.0 {
            a_lo - s_lo * width * width / denom
        } else {
            a_lo + 0.5 * width
        };
        let (left, right) = if a_lo < a_hi { (a_lo, a_hi) } else { (a_hi, a_lo) };
        let margin = 0.1 * (right - left);
        if !(trial > left + margin && trial < right - margin) {
            trial = 0.5 * (a_lo + a_hi);
        }
        if trial == a_lo || trial == a_hi {
            return Err(fail(trials));
        }
        let (value, grad) = eval(trial)?;
        trials += 1;
        let slope = grad.dot(d);
        if !value.is_finite() || !armijo(trial, value) || value >= v_lo {
            hi = (trial, value, slope);
        } else {
            if curvature(slope) {
                return Ok(LineSearchResult {
                    alpha: trial,
                    value,
                    gradient: grad,
                    trials,
                });
            }
            if slope * (a_hi - a_lo) >= 0.0 {
                hi = lo;
            }
            lo = (trial, value, slope);
        }
    }
}
