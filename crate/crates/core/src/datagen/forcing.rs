use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const FORCING_TERMS: usize = 5;

/// How the temporal frequencies `ω_j` are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaMode {
    /// `ω_j = −0.4` for every term.
    #[default]
    Fixed,
    /// `ω_j ~ U[−0.4, 0.4]`.
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    pub amplitude: f64,
    pub omega: f64,
    pub ell: u32,
    pub phase: f64,
}

/// `δ(t, x) = Σ_j A_j sin(ω_j t + 2πℓ_j x / L + φ_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub terms: Vec<ForcingTerm>,
    pub length: f64,
}

impl ForcingSpec {
    pub fn sample(rng: &mut ChaCha8Rng, length: f64, omega: OmegaMode) -> Self {
        let terms = (0..FORCING_TERMS)
            .map(|_| ForcingTerm {
                amplitude: rng.random_range(-0.5..=0.5),
                omega: match omega {
                    OmegaMode::Fixed => -0.4,
                    OmegaMode::Symmetric => rng.random_range(-0.4..=0.4),
                },
                ell: rng.random_range(1..=3),
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect();
        Self { terms, length }
    }

    pub fn from_seed(seed: u64, length: f64, omega: OmegaMode) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed), length, omega)
    }

    pub fn eval_at(&self, t: f64, x: f64) -> f64 {
        self.terms
            .iter()
            .map(|j| {
                j.amplitude * (j.omega * t + 2.0 * PI * j.ell as f64 * x / self.length + j.phase).sin()
            })
            .sum()
    }

    pub fn eval(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval_at(t, x)).collect()
    }
}
