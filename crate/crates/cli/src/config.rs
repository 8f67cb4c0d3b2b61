//! Flat `key = value` run configuration: documented defaults, overridden by a
//! config file, overridden by command-line flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lram::fem::FieldDistribution;
use lram::lowrank::EnergyConvention;
use lram::socp::{DesiredState, LineSearchParams, Method, MismatchWeight, OptimizerSpec, StatePairing};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Spde,
    Socp,
    Compress,
    Diagnose,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Spde => "spde",
            Subcommand::Socp => "socp",
            Subcommand::Compress => "compress",
            Subcommand::Diagnose => "diagnose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Smw,
    Neumann,
    Direct,
}

impl FromStr for SolverChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smw" => Ok(SolverChoice::Smw),
            "neumann" => Ok(SolverChoice::Neumann),
            "direct" => Ok(SolverChoice::Direct),
            _ => Err("expected smw, neumann or direct".into()),
        }
    }
}

impl Display for SolverChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverChoice::Smw => "smw",
            SolverChoice::Neumann => "neumann",
            SolverChoice::Direct => "direct",
        })
    }
}

fn convention_name(c: EnergyConvention) -> &'static str {
    match c {
        EnergyConvention::Eigen => "eigen",
        EnergyConvention::EigenSquared => "eigen-squared",
    }
}

/// Every setting of every subcommand. Keys not used by a subcommand are
/// still carried into its manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    pub timings: bool,

    pub h: f64,
    pub m: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub distribution: FieldDistribution,

    pub method: SolverChoice,
    pub neumann_order: usize,
    pub reference: bool,
    pub direct_fallback: bool,
    pub energy_convention: EnergyConvention,
    pub condition_samples: usize,
    pub tau_scan: Vec<f64>,

    pub optimizer: Method,
    pub compare_methods: bool,
    pub beta: f64,
    pub epsilon_grad: f64,
    pub max_outer_iters: usize,
    pub desired_state: DesiredState,
    pub pairing: StatePairing,
    pub mismatch_weight: MismatchWeight,
    pub initial_control: f64,
    pub ls_c1: f64,
    pub ls_c2: f64,
    pub ls_max_trials: usize,
    pub ls_expansion: f64,
    pub sgd_batch: usize,
    pub sgd_decay: f64,
    pub sgd_check_every: usize,
    pub sgd_seed: u64,
    pub tr_radius: f64,
    pub tr_max_radius: f64,
    pub tr_expand: f64,
    pub tr_shrink: f64,
    pub tr_accept: f64,

    pub ensemble_dir: Option<PathBuf>,
    pub glram: bool,
    pub glram_max_iters: usize,
    pub glram_rel_tol: f64,
}

impl Config {
    /// Documented defaults for `sub`. The control problem defaults to a
    /// smaller uniform-field ensemble; everything else is shared.
    pub fn defaults(sub: Subcommand) -> Self {
        let opt = OptimizerSpec::default();
        let socp = sub == Subcommand::Socp;
        Self {
            seed: 42,
            threads: 0,
            timings: false,
            h: 0.1,
            m: if socp { 50 } else { 100 },
            tau: 1.0,
            epsilon: 0.2,
            distribution: if socp {
                FieldDistribution::UniformSym
            } else {
                FieldDistribution::StandardNormal
            },
            method: SolverChoice::Smw,
            neumann_order: 10,
            reference: true,
            direct_fallback: false,
            energy_convention: EnergyConvention::Eigen,
            condition_samples: 0,
            tau_scan: vec![0.4, 0.6, 0.8, 1.0],
            optimizer: Method::Newton,
            compare_methods: false,
            beta: 1e-4,
            epsilon_grad: opt.epsilon_grad,
            max_outer_iters: opt.max_outer_iters,
            desired_state: DesiredState::SinSin,
            pairing: StatePairing::NodalInterpolant,
            mismatch_weight: MismatchWeight::Mass,
            initial_control: 0.0,
            ls_c1: opt.line_search.c1,
            ls_c2: opt.line_search.c2,
            ls_max_trials: opt.line_search.max_trials,
            ls_expansion: opt.line_search.expansion,
            sgd_batch: opt.sgd_batch,
            sgd_decay: opt.sgd_decay,
            sgd_check_every: opt.sgd_check_every,
            sgd_seed: opt.sgd_seed,
            tr_radius: opt.tr_radius,
            tr_max_radius: opt.tr_max_radius,
            tr_expand: opt.tr_expand,
            tr_shrink: opt.tr_shrink,
            tr_accept: opt.tr_accept,
            ensemble_dir: None,
            glram: false,
            glram_max_iters: 100,
            glram_rel_tol: 1e-12,
        }
    }

    /// Defaults, then `file` (if any), then `overrides` in order, then range checks.
    pub fn resolve(sub: Subcommand, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = Self::defaults(sub);
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| CliError::Parse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| e.at_line(line))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |message: String| CliError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            message,
            line: None,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: Display,
        {
            v.parse::<T>().map_err(|e| e.to_string())
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err("expected true or false".into()),
            }
        }

        // Ok(false) means the key is unknown
        let known: Result<bool, String> = (|| {
            match key {
                "seed" => self.seed = num(value)?,
                "threads" => self.threads = num(value)?,
                "timings" => self.timings = flag(value)?,
                "h" => self.h = num(value)?,
                "M" => self.m = num(value)?,
                "tau" => self.tau = num(value)?,
                "epsilon" => self.epsilon = num(value)?,
                "distribution" => self.distribution = num(value)?,
                "method" => self.method = num(value)?,
                "neumann_order" => self.neumann_order = num(value)?,
                "reference" => self.reference = flag(value)?,
                "direct_fallback" => self.direct_fallback = flag(value)?,
                "energy_convention" => {
                    self.energy_convention = match value {
                        "eigen" => EnergyConvention::Eigen,
                        "eigen-squared" => EnergyConvention::EigenSquared,
                        _ => return Err("expected eigen or eigen-squared".into()),
                    }
                }
                "condition_samples" => self.condition_samples = num(value)?,
                "tau_scan" => {
                    self.tau_scan = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(num)
                        .collect::<Result<_, _>>()?
                }
                "optimizer" => self.optimizer = num(value)?,
                "compare_methods" => self.compare_methods = flag(value)?,
                "beta" => self.beta = num(value)?,
                "epsilon_grad" => self.epsilon_grad = num(value)?,
                "max_outer_iters" => self.max_outer_iters = num(value)?,
                "desired_state" => self.desired_state = num(value)?,
                "pairing" => self.pairing = num(value)?,
                "mismatch_weight" => self.mismatch_weight = num(value)?,
                "initial_control" => self.initial_control = num(value)?,
                "ls_c1" => self.ls_c1 = num(value)?,
                "ls_c2" => self.ls_c2 = num(value)?,
                "ls_max_trials" => self.ls_max_trials = num(value)?,
                "ls_expansion" => self.ls_expansion = num(value)?,
                "sgd_batch" => self.sgd_batch = num(value)?,
                "sgd_decay" => self.sgd_decay = num(value)?,
                "sgd_check_every" => self.sgd_check_every = num(value)?,
                "sgd_seed" => self.sgd_seed = num(value)?,
                "tr_radius" => self.tr_radius = num(value)?,
                "tr_max_radius" => self.tr_max_radius = num(value)?,
                "tr_expand" => self.tr_expand = num(value)?,
                "tr_shrink" => self.tr_shrink = num(value)?,
                "tr_accept" => self.tr_accept = num(value)?,
                "ensemble_dir" => {
                    self.ensemble_dir = if value.is_empty() { None } else { Some(PathBuf::from(value)) }
                }
                "glram" => self.glram = flag(value)?,
                "glram_max_iters" => self.glram_max_iters = num(value)?,
                "glram_rel_tol" => self.glram_rel_tol = num(value)?,
                _ => return Ok(false),
            }
            Ok(true)
        })();
        match known {
            Ok(true) => Ok(()),
            Ok(false) => Err(CliError::UnknownKey {
                key: key.to_string(),
                line: None,
            }),
            Err(m) => Err(bad(m)),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let range = |key: &str, message: String| Err(CliError::Range { key: key.into(), message });
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return range("tau", format!("{} is outside (0, 1]", self.tau));
        }
        if let Some(t) = self.tau_scan.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return range("tau_scan", format!("{t} is outside (0, 1]"));
        }
        if !(self.h > 0.0 && self.h < 1.0) {
            return range("h", format!("{} is outside (0, 1)", self.h));
        }
        if self.m == 0 {
            return range("M", "must be at least 1".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return range("epsilon", format!("{} must be >= 0", self.epsilon));
        }
        if !finite_pos(self.beta) {
            return range("beta", format!("{} must be > 0", self.beta));
        }
        if !finite_pos(self.epsilon_grad) {
            return range("epsilon_grad", format!("{} must be > 0", self.epsilon_grad));
        }
        if !self.initial_control.is_finite() {
            return range("initial_control", "must be finite".into());
        }
        if !finite_pos(self.glram_rel_tol) || self.glram_max_iters == 0 {
            return range("glram_rel_tol", "GLRAM tolerance and iteration cap must be positive".into());
        }
        self.optimizer_spec(self.optimizer)
            .validate()
            .or_else(|e| range("optimizer", e.to_string()))
    }

    pub fn optimizer_spec(&self, method: Method) -> OptimizerSpec {
        OptimizerSpec {
            method,
            epsilon_grad: self.epsilon_grad,
            max_outer_iters: self.max_outer_iters,
            line_search: LineSearchParams {
                c1: self.ls_c1,
                c2: self.ls_c2,
                max_trials: self.ls_max_trials,
                expansion: self.ls_expansion,
            },
            sgd_batch: self.sgd_batch,
            sgd_decay: self.sgd_decay,
            sgd_check_every: self.sgd_check_every,
            sgd_seed: self.sgd_seed,
            tr_radius: self.tr_radius,
            tr_max_radius: self.tr_max_radius,
            tr_expand: self.tr_expand,
            tr_shrink: self.tr_shrink,
            tr_accept: self.tr_accept,
        }
    }

    /// All settings in a fixed order, formatted so that `set` reads them back exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("timings", self.timings.to_string()),
            ("h", self.h.to_string()),
            ("M", self.m.to_string()),
            ("tau", self.tau.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("distribution", self.distribution.to_string()),
            ("method", self.method.to_string()),
            ("neumann_order", self.neumann_order.to_string()),
            ("reference", self.reference.to_string()),
            ("direct_fallback", self.direct_fallback.to_string()),
            ("energy_convention", convention_name(self.energy_convention).to_string()),
            ("condition_samples", self.condition_samples.to_string()),
            ("tau_scan", list(&self.tau_scan)),
            ("optimizer", self.optimizer.to_string()),
            ("compare_methods", self.compare_methods.to_string()),
            ("beta", self.beta.to_string()),
            ("epsilon_grad", self.epsilon_grad.to_string()),
            ("max_outer_iters", self.max_outer_iters.to_string()),
            ("desired_state", self.desired_state.to_string()),
            ("pairing", self.pairing.to_string()),
            ("mismatch_weight", self.mismatch_weight.to_string()),
            ("initial_control", self.initial_control.to_string()),
            ("ls_c1", self.ls_c1.to_string()),
            ("ls_c2", self.ls_c2.to_string()),
            ("ls_max_trials", self.ls_max_trials.to_string()),
            ("ls_expansion", self.ls_expansion.to_string()),
            ("sgd_batch", self.sgd_batch.to_string()),
            ("sgd_decay", self.sgd_decay.to_string()),
            ("sgd_check_every", self.sgd_check_every.to_string()),
            ("sgd_seed", self.sgd_seed.to_string()),
            ("tr_radius", self.tr_radius.to_string()),
            ("tr_max_radius", self.tr_max_radius.to_string()),
            ("tr_expand", self.tr_expand.to_string()),
            ("tr_shrink", self.tr_shrink.to_string()),
            ("tr_accept", self.tr_accept.to_string()),
            (
                "ensemble_dir",
                self.ensemble_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("glram", self.glram.to_string()),
            ("glram_max_iters", self.glram_max_iters.to_string()),
            ("glram_rel_tol", self.glram_rel_tol.to_string()),
        ]
    }
}

/// Drops a `#` comment. A `#` only starts a comment at the beginning of the
/// line or after whitespace, so values may contain it.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut cfg = Config::defaults(Subcommand::Socp);
        cfg.tau = 0.88;
        cfg.tau_scan = vec![0.1, 1.0 / 3.0];
        cfg.ensemble_dir = Some(PathBuf::from("data/ens"));
        let text: String = cfg.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let mut back = Config::defaults(Subcommand::Spde);
        back.apply_text(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_entry_is_a_known_key() {
        let cfg = Config::defaults(Subcommand::Spde);
        let mut other = cfg.clone();
        for (k, v) in cfg.entries() {
            other.set(k, &v).unwrap();
        }
        assert_eq!(other, cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut cfg = Config::defaults(Subcommand::Spde);
        cfg.apply_text("# header\n\n tau = 0.5 # trailing\nh=0.25\n").unwrap();
        assert_eq!((cfg.tau, cfg.h), (0.5, 0.25));
    }

    #[test]
    fn errors_carry_line_and_key() {
        let mut cfg = Config::defaults(Subcommand::Spde);
        let e = cfg.apply_text("tau = 0.5\nnonsense\n").unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 2, .. }));
        let e = cfg.apply_text("\n\nfoo = 1\n").unwrap_err();
        assert!(matches!(e, CliError::UnknownKey { line: Some(3), ref key } if key == "foo"));
        let e = cfg.apply_text("M = many\n").unwrap_err();
        assert!(matches!(e, CliError::InvalidValue { line: Some(1), ref key, .. } if key == "M"));
    }

    #[test]
    fn range_checks() {
        let mut cfg = Config::defaults(Subcommand::Spde);
        cfg.tau = 1.5;
        assert!(matches!(cfg.validate(), Err(CliError::Range { ref key, .. }) if key == "tau"));
        let mut cfg = Config::defaults(Subcommand::Socp);
        cfg.ls_c1 = 0.95;
        assert!(cfg.validate().is_err());
    }
}
