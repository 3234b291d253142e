//! Groundtruth for `∂t u + ∂x(αu² − β∂x u + γ∂xx u) = δ` on periodic grids.

use crate::datagen::forcing::ForcingSpec;
use crate::datagen::task::PdeParams;
use crate::datagen::Trajectory;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::stencil::centered_uniform;
use crate::timestep::{integrate_adaptive, AdaptiveOptions};
use crate::weno::{Flux, WenoWorkspace};

/// Method-of-lines right-hand side: WENO5 for the convective flux, fourth-order
/// centred stencils for the diffusive and dispersive terms.
pub struct CombinedRhs {
    grid: Grid,
    alpha: f64,
    beta: f64,
    gamma: f64,
    forcing: Option<ForcingSpec>,
    d2: Vec<f64>,
    d3: Vec<f64>,
    flux: Flux,
    weno: WenoWorkspace,
    conv: Vec<f64>,
}

impl CombinedRhs {
    pub fn new(grid: &Grid, params: &PdeParams, forcing: Option<&ForcingSpec>) -> Result<Self> {
        let PdeParams::Combined { alpha, beta, gamma } = *params else {
            return Err(Error::Config("combined right-hand side needs combined-equation parameters".into()));
        };
        if !grid.is_periodic() {
            return Err(Error::Unsupported("combined equation needs a periodic grid".into()));
        }
        let dx = grid
            .dx()
            .ok_or_else(|| Error::Unsupported("combined equation needs a uniform grid".into()))?;
        if grid.n_x() < 7 {
            return Err(Error::InvalidGrid(format!("need at least 7 cells, got {}", grid.n_x())));
        }
        Ok(Self {
            grid: grid.clone(),
            alpha,
            beta,
            gamma,
            forcing: forcing.cloned(),
            d2: centered_uniform(dx, 2, 2)?.coeffs,
            d3: centered_uniform(dx, 3, 3)?.coeffs,
            flux: Flux::Quadratic { a: alpha, b: 0.0, c: 0.0 },
            weno: WenoWorkspace::default(),
            conv: vec![0.0; grid.n_x()],
        })
    }

    pub fn eval(&mut self, t: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.n_x();
        if u.len() != n || out.len() != n {
            return Err(Error::Contract(format!("expected {n} values")));
        }
        if self.alpha != 0.0 {
            self.weno.flux_divergence(u, &self.grid, &self.flux, &mut self.conv)?;
        } else {
            self.conv.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = self.grid.centers();
        for i in 0..n {
            let mut du = -self.conv[i];
            if self.beta != 0.0 {
                du += self.beta * apply_periodic(&self.d2, u, i);
            }
            if self.gamma != 0.0 {
                du -= self.gamma * apply_periodic(&self.d3, u, i);
            }
            if let Some(f) = &self.forcing {
                du += f.eval_at(t, x[i]);
            }
            out[i] = du;
        }
        Ok(())
    }
}

fn apply_periodic(coeffs: &[f64], u: &[f64], i: usize) -> f64 {
    let n = u.len() as isize;
    let half = (coeffs.len() / 2) as isize;
    coeffs
        .iter()
        .enumerate()
        .map(|(k, c)| c * u[(i as isize + k as isize - half).rem_euclid(n) as usize])
        .sum()
}

/// One-shot evaluation of the combined right-hand side.
pub fn combined_rhs(
    u: &[f64],
    grid: &Grid,
    params: &PdeParams,
    forcing: Option<&ForcingSpec>,
    t: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.len()];
    CombinedRhs::new(grid, params, forcing)?.eval(t, u, &mut out)?;
    Ok(out)
}

/// `n_t` uniform save times on `[0, t_end]`.
pub fn save_times(n_t: usize, t_end: f64) -> Vec<f64> {
    if n_t == 1 {
        return vec![0.0];
    }
    (0..n_t).map(|k| t_end * k as f64 / (n_t - 1) as f64).collect()
}

/// Integrates from `u(0, x) = δ(0, x)` and saves `n_t` uniform frames on `[0, t_end]`.
pub fn generate_combined(
    grid: &Grid,
    params: &PdeParams,
    forcing: &ForcingSpec,
    seed: u64,
    n_t: usize,
    t_end: f64,
    opts: &AdaptiveOptions,
) -> Result<Trajectory> {
    let u0 = forcing.eval(0.0, grid.centers());
    integrate_from(grid, params, Some(forcing), &u0, seed, n_t, t_end, opts)
}

/// Integrates an arbitrary initial field with the combined right-hand side.
#[allow(clippy::too_many_arguments)]
pub fn integrate_from(
    grid: &Grid,
    params: &PdeParams,
    forcing: Option<&ForcingSpec>,
    u0: &[f64],
    seed: u64,
    n_t: usize,
    t_end: f64,
    opts: &AdaptiveOptions,
) -> Result<Trajectory> {
    if n_t < 2 || !(t_end > 0.0) {
        return Err(Error::Config(format!("need n_t ≥ 2 and t_end > 0, got {n_t}, {t_end}")));
    }
    let mut rhs = CombinedRhs::new(grid, params, forcing)?;
    let times = save_times(n_t, t_end);
    let sol = integrate_adaptive(&mut |t, u, out| rhs.eval(t, u, out), u0, 0.0, &times, opts).map_err(
        |e| Error::Generation {
            seed,
            params: params.to_string(),
            source: Box::new(e),
        },
    )?;
    Ok(Trajectory {
        data: sol.states.concat(),
        times,
        grid: grid.clone(),
        params: *params,
        forcing: forcing.cloned(),
        seed,
    })
}
