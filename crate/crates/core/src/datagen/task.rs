use std::fmt;
use std::str::FromStr;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Boundary;

pub const COMBINED_DOMAIN: (f64, f64) = (0.0, 16.0);
pub const COMBINED_T_END: f64 = 4.0;
pub const WAVE_DOMAIN: (f64, f64) = (-8.0, 8.0);
pub const WAVE_T_END: f64 = 16.0;
pub const WAVE_SPEED: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    E1,
    E2,
    E3,
    WE1,
    WE2,
    WE3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Combined,
    Wave,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::E1, Task::E2, Task::E3, Task::WE1, Task::WE2, Task::WE3];

    pub fn kind(self) -> TaskKind {
        match self {
            Task::E1 | Task::E2 | Task::E3 => TaskKind::Combined,
            _ => TaskKind::Wave,
        }
    }

    pub fn domain(self) -> (f64, f64) {
        match self.kind() {
            TaskKind::Combined => COMBINED_DOMAIN,
            TaskKind::Wave => WAVE_DOMAIN,
        }
    }

    pub fn t_end(self) -> f64 {
        match self.kind() {
            TaskKind::Combined => COMBINED_T_END,
            TaskKind::Wave => WAVE_T_END,
        }
    }

    /// Closed ranges of the three θ coefficients. Degenerate ranges mark
    /// coefficients that are fixed for the task.
    pub fn theta_ranges(self) -> [(f64, f64); 3] {
        match self {
            Task::E1 => [(1.0, 1.0), (0.0, 0.0), (0.0, 0.0)],
            Task::E2 => [(1.0, 1.0), (0.0, 0.2), (0.0, 0.0)],
            Task::E3 => [(0.0, 3.0), (0.0, 0.4), (0.0, 1.0)],
            Task::WE1 => [(WAVE_SPEED, WAVE_SPEED), (0.0, 0.0), (0.0, 0.0)],
            Task::WE2 => [(WAVE_SPEED, WAVE_SPEED), (1.0, 1.0), (1.0, 1.0)],
            Task::WE3 => [(WAVE_SPEED, WAVE_SPEED), (0.0, 1.0), (0.0, 1.0)],
        }
    }

    pub fn theta_names(self) -> [&'static str; 3] {
        match self.kind() {
            TaskKind::Combined => ["alpha", "beta", "gamma"],
            TaskKind::Wave => ["c", "bc_left", "bc_right"],
        }
    }

    pub fn sample_params(self, rng: &mut ChaCha8Rng) -> PdeParams {
        let [a, b, g] = self.theta_ranges();
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if lo == hi { lo } else { rng.random_range(lo..=hi) }
        };
        match self {
            Task::E1 | Task::E2 | Task::E3 => PdeParams::Combined {
                alpha: draw(rng, a),
                beta: draw(rng, b),
                gamma: draw(rng, g),
            },
            Task::WE1 => PdeParams::wave(WAVE_SPEED, Boundary::Dirichlet, Boundary::Dirichlet),
            Task::WE2 => PdeParams::wave(WAVE_SPEED, Boundary::Neumann, Boundary::Neumann),
            Task::WE3 => {
                let side = |rng: &mut ChaCha8Rng| {
                    if rng.random_bool(0.5) { Boundary::Neumann } else { Boundary::Dirichlet }
                };
                let left = side(rng);
                let right = side(rng);
                PdeParams::wave(WAVE_SPEED, left, right)
            }
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task `{s}` (expected E1-E3 or WE1-WE3)")))
    }
}

/// Equation parameters θ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdeParams {
    /// `∂t u + ∂x(αu² − β∂x u + γ∂xx u) = δ` on a periodic domain.
    Combined { alpha: f64, beta: f64, gamma: f64 },
    /// `∂tt u = c²∂xx u` with a boundary condition at each end.
    Wave { c: f64, left: Boundary, right: Boundary },
}

impl PdeParams {
    pub fn wave(c: f64, left: Boundary, right: Boundary) -> Self {
        PdeParams::Wave { c, left, right }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            PdeParams::Combined { .. } => TaskKind::Combined,
            PdeParams::Wave { .. } => TaskKind::Wave,
        }
    }

    /// The three coefficients stored in shards and fed to the model.
    pub fn theta(&self) -> [f64; 3] {
        match *self {
            PdeParams::Combined { alpha, beta, gamma } => [alpha, beta, gamma],
            PdeParams::Wave { c, left, right } => [c, left.code(), right.code()],
        }
    }

    pub fn from_theta(kind: TaskKind, theta: [f64; 3]) -> Result<Self> {
        let p = match kind {
            TaskKind::Combined => PdeParams::Combined {
                alpha: theta[0],
                beta: theta[1],
                gamma: theta[2],
            },
            TaskKind::Wave => PdeParams::Wave {
                c: theta[0],
                left: Boundary::from_code(theta[1])?,
                right: Boundary::from_code(theta[2])?,
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PdeParams::Combined { alpha, beta, gamma } => {
                if ![alpha, beta, gamma].iter().all(|v| v.is_finite()) {
                    return Err(Error::Config("non-finite equation coefficients".into()));
                }
            }
            PdeParams::Wave { c, left, right } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::Config(format!("wave speed must be positive, got {c}")));
                }
                if left == Boundary::Periodic || right == Boundary::Periodic {
                    return Err(Error::Config("wave tasks need Dirichlet or Neumann ends".into()));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for PdeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PdeParams::Combined { alpha, beta, gamma } => {
                write!(f, "alpha={alpha}, beta={beta}, gamma={gamma}")
            }
            PdeParams::Wave { c, left, right } => write!(f, "c={c}, left={left:?}, right={right:?}"),
        }
    }
}
