use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldDistribution {
    #[default]
    StandardNormal,
    /// Uniform on `[-1, 1]`.
    UniformSym,
}

impl fmt::Display for FieldDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldDistribution::StandardNormal => "gaussian",
            FieldDistribution::UniformSym => "uniform",
        })
    }
}

impl FromStr for FieldDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "standard-normal" => Ok(FieldDistribution::StandardNormal),
            "uniform" | "uniform-sym" => Ok(FieldDistribution::UniformSym),
            other => Err(Error::InvalidArgument(format!("unknown distribution '{other}'"))),
        }
    }
}

/// One realization of the elementwise perturbation `ε σ_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomField {
    pub epsilon: f64,
    pub distribution: FieldDistribution,
    /// Unscaled draws `σ_e`, one per element.
    pub values: Vec<f64>,
    pub master_seed: u64,
    pub sample: usize,
}

impl RandomField {
    /// Perturbation coefficient `ε σ_e` on element `e`.
    pub fn coefficient(&self, e: usize) -> f64 {
        self.epsilon * self.values[e]
    }

    pub fn coefficients(&self) -> Vec<f64> {
        (0..self.values.len()).map(|e| self.coefficient(e)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "element,sigma,coefficient")?;
        for (e, v) in self.values.iter().enumerate() {
            writeln!(out, "{e},{v:e},{:e}", self.coefficient(e))?;
        }
        Ok(())
    }
}

/// Stream for sample `m`: the master seed picks the key, the sample index the
/// stream, so a draw depends on `(master_seed, m)` only.
pub fn sample_rng(master_seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sample as u64);
    rng
}

pub fn sample_field(
    num_elements: usize,
    epsilon: f64,
    distribution: FieldDistribution,
    master_seed: u64,
    sample: usize,
) -> RandomField {
    let mut rng = sample_rng(master_seed, sample);
    let values = (0..num_elements)
        .map(|_| match distribution {
            FieldDistribution::StandardNormal => rng.sample(StandardNormal),
            FieldDistribution::UniformSym => rng.random_range(-1.0..=1.0),
        })
        .collect();
    RandomField {
        epsilon,
        distribution,
        values,
        master_seed,
        sample,
    }
}

/// Samples `0..count` for a mesh with `num_elements` elements.
pub fn sample_fields(
    num_elements: usize,
    count: usize,
    epsilon: f64,
    distribution: FieldDistribution,
    master_seed: u64,
) -> Result<Vec<RandomField>> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must be >= 0")));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|m| sample_field(num_elements, epsilon, distribution, master_seed, m))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_per_sample() {
        let a = sample_fields(50, 4, 0.2, FieldDistribution::StandardNormal, 7).unwrap();
        let b = sample_fields(50, 9, 0.2, FieldDistribution::StandardNormal, 7).unwrap();
        assert_eq!(a[..], b[..4]);
        assert_eq!(a[3], sample_field(50, 0.2, FieldDistribution::StandardNormal, 7, 3));
        assert_ne!(a[0].values, a[1].values);
    }

    #[test]
    fn zero_epsilon_gives_zero_coefficients() {
        let f = sample_field(10, 0.0, FieldDistribution::StandardNormal, 1, 0);
        assert!(f.coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn distribution_names_round_trip() {
        for d in [FieldDistribution::StandardNormal, FieldDistribution::UniformSym] {
            assert_eq!(d.to_string().parse::<FieldDistribution>().unwrap(), d);
        }
        assert!("cauchy".parse::<FieldDistribution>().is_err());
    }
}
