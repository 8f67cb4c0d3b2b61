use std::path::PathBuf;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use crate::config::Subcommand;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lram", version, about = "Low-rank ensemble solves, stochastic FEM and optimal control")]
pub struct Cli {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<String>,
    #[arg(long, global = true, value_name = "DIR", default_value = "lram-out")]
    pub out_dir: PathBuf,
    /// Add a time column to methods.csv (makes that file run-dependent).
    #[arg(long, global = true)]
    pub timings: bool,
    /// Set any config key; applied after every other flag.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ProblemArgs {
    /// Mesh width; the grid has round(1/h) cells per side.
    #[arg(long)]
    pub h: Option<String>,
    /// Number of Monte Carlo samples.
    #[arg(long = "M")]
    pub m: Option<String>,
    /// Dimension-reduction ratio in (0, 1].
    #[arg(long)]
    pub tau: Option<String>,
    /// Perturbation amplitude of the diffusion coefficient.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// gaussian or uniform.
    #[arg(long)]
    pub distribution: Option<String>,
}

#[derive(Debug, ClapSubcommand)]
pub enum Command {
    /// Mean solution of the random-coefficient Poisson problem.
    Spde {
        #[command(flatten)]
        problem: ProblemArgs,
        /// smw, neumann or direct.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        neumann_order: Option<String>,
        /// Comma-separated ratios for errors_vs_tau.csv.
        #[arg(long, value_name = "LIST")]
        tau_scan: Option<String>,
    },
    /// Optimal control of the mean state.
    Socp {
        #[command(flatten)]
        problem: ProblemArgs,
        /// sdm, sgd, newton, bfgs or trm.
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        beta: Option<String>,
        #[arg(long)]
        epsilon_grad: Option<String>,
        #[arg(long)]
        max_iters: Option<String>,
        /// sin-sin or sin-squared.
        #[arg(long)]
        desired_state: Option<String>,
        /// mass or identity.
        #[arg(long)]
        mismatch_weight: Option<String>,
        /// Run all five optimizers and write methods.csv.
        #[arg(long)]
        compare_methods: bool,
    },
    /// Low-rank factors of an ensemble.
    Compress {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Directory of MatrixMarket perturbation files instead of a FEM ensemble.
        #[arg(long, value_name = "DIR")]
        ensemble_dir: Option<String>,
        /// Also run the two-sided GLRAM baseline.
        #[arg(long)]
        glram: bool,
    },
    /// Spectrum, energy ratio, critical rank and condition estimates.
    Diagnose {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_name = "DIR")]
        ensemble_dir: Option<String>,
        #[arg(long)]
        condition_samples: Option<String>,
    },
}

impl Cli {
    pub fn subcommand(&self) -> Subcommand {
        match self.command {
            Command::Spde { .. } => Subcommand::Spde,
            Command::Socp { .. } => Subcommand::Socp,
            Command::Compress { .. } => Subcommand::Compress,
            Command::Diagnose { .. } => Subcommand::Diagnose,
        }
    }

    /// Flag values as `(key, value)` config overrides, in application order.
    pub fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        };
        put("seed", &self.seed);
        put("threads", &self.threads);
        let problem = match &self.command {
            Command::Spde { problem, .. }
            | Command::Socp { problem, .. }
            | Command::Compress { problem, .. }
            | Command::Diagnose { problem, .. } => problem,
        };
        put("h", &problem.h);
        put("M", &problem.m);
        put("tau", &problem.tau);
        put("epsilon", &problem.epsilon);
        put("distribution", &problem.distribution);
        let on = Some("true".to_string());
        match &self.command {
            Command::Spde {
                method,
                neumann_order,
                tau_scan,
                ..
            } => {
                put("method", method);
                put("neumann_order", neumann_order);
                put("tau_scan", tau_scan);
            }
            Command::Socp {
                optimizer,
                beta,
                epsilon_grad,
                max_iters,
                desired_state,
                mismatch_weight,
                compare_methods,
                ..
            } => {
                put("optimizer", optimizer);
                put("beta", beta);
                put("epsilon_grad", epsilon_grad);
                put("max_outer_iters", max_iters);
                put("desired_state", desired_state);
                put("mismatch_weight", mismatch_weight);
                if *compare_methods {
                    put("compare_methods", &on);
                }
            }
            Command::Compress { ensemble_dir, glram, .. } => {
                put("ensemble_dir", ensemble_dir);
                if *glram {
                    put("glram", &on);
                }
            }
            Command::Diagnose {
                ensemble_dir,
                condition_samples,
                ..
            } => {
                put("ensemble_dir", ensemble_dir);
                put("condition_samples", condition_samples);
            }
        }
        if self.timings {
            put("timings", &on);
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}
