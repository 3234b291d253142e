//! Self-contained numerical checks of the groundtruth solvers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::datagen::analytic::{burgers_case1, burgers_case2_with, cell_average, gauss_hermite, gauss_legendre, CASE2_T_MAX};
use crate::datagen::combined::integrate_from;
use crate::datagen::wave::{integrate_wave, reflected_solution};
use crate::datagen::PdeParams;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid};
use crate::stencil::{interpolation_stencil, reconstruction_stencil};
use crate::timestep::AdaptiveOptions;
use crate::weno::{weno5_flux_divergence, Flux, DEFAULT_EPS};

pub const SUITES: [&str; 6] = ["stencils", "weno", "burgers1", "burgers2", "conservation", "wave"];

pub const BURGERS_NU: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    /// True when the value must reach the limit rather than stay below it.
    pub at_least: bool,
    pub passed: bool,
}

impl Check {
    pub fn below(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            at_least: false,
            passed: value < limit,
        }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            at_least: true,
            passed: value >= limit,
        }
    }

    /// Informational measurement that cannot fail.
    pub fn info(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: f64::INFINITY,
            at_least: false,
            passed: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteResult {
    fn new(name: &str, checks: Vec<Check>) -> Self {
        Self {
            name: name.into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

pub fn run_suite(name: &str) -> Result<SuiteResult> {
    match name {
        "stencils" => stencil_suite(),
        "weno" => weno_suite(),
        "burgers1" => burgers1_suite(),
        "burgers2" => burgers2_suite(),
        "conservation" => conservation_suite(),
        "wave" => wave_suite(),
        other => Err(Error::Config(format!(
            "unknown suite `{other}`; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

/// Runs the named suites, or all of them for an empty filter.
pub fn run_validation(filter: &[String]) -> Result<ValidationReport> {
    let names: Vec<&str> = if filter.is_empty() {
        SUITES.to_vec()
    } else {
        filter.iter().map(String::as_str).collect()
    };
    let suites = names.into_iter().map(run_suite).collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn stencil_suite() -> Result<SuiteResult> {
    let h = 0.1;
    let p = [-h, 0.0, h];
    let d1 = interpolation_stencil(&p, 0.0, 1)?;
    let d2 = interpolation_stencil(&p, 0.0, 2)?;
    let scaled = |s: &[f64], f: f64| s.iter().map(|c| c * f).collect::<Vec<_>>();
    let mut checks = vec![
        Check::below("first derivative [-1/2, 0, 1/2]/h", max_dev(&scaled(&d1.coeffs, h), &[-0.5, 0.0, 0.5]), 1e-12),
        Check::below("second derivative [1, -2, 1]/h^2", max_dev(&scaled(&d2.coeffs, h * h), &[1.0, -2.0, 1.0]), 1e-12),
    ];
    // value at the right face of cell 0 from three unit cells
    let candidates: [([f64; 4], [f64; 3]); 3] = [
        ([-2.5, -1.5, -0.5, 0.5], [1.0 / 3.0, -7.0 / 6.0, 11.0 / 6.0]),
        ([-1.5, -0.5, 0.5, 1.5], [-1.0 / 6.0, 5.0 / 6.0, 1.0 / 3.0]),
        ([-0.5, 0.5, 1.5, 2.5], [1.0 / 3.0, 5.0 / 6.0, -1.0 / 6.0]),
    ];
    for (r, (edges, want)) in candidates.iter().enumerate() {
        let s = reconstruction_stencil(edges, 0.5, 0)?;
        checks.push(Check::below(&format!("reconstruction candidate {r}"), max_dev(&s.coeffs, want), 1e-12));
    }
    Ok(SuiteResult::new("stencils", checks))
}

/// Max error of the WENO5 flux divergence of `u = sin(2πx/L)`, `f = u²/2`,
/// against the exact face-flux difference.
pub fn weno_error(n: usize) -> Result<f64> {
    let len = 2.0 * PI;
    let grid = Grid::uniform(n, (0.0, len), Boundary::Periodic)?;
    let e = grid.edges();
    let k = 2.0 * PI / len;
    let avg: Vec<f64> = (0..n).map(|i| ((k * e[i]).cos() - (k * e[i + 1]).cos()) / (k * (e[i + 1] - e[i]))).collect();
    let div = weno5_flux_divergence(&avg, &grid, &Flux::burgers(), DEFAULT_EPS)?;
    let f = |x: f64| 0.5 * (k * x).sin().powi(2);
    Ok((0..n)
        .map(|i| (div[i] - (f(e[i + 1]) - f(e[i])) / (e[i + 1] - e[i])).abs())
        .fold(0.0, f64::max))
}

pub fn weno_suite() -> Result<SuiteResult> {
    let ns = [50usize, 100, 200];
    let errs = ns.iter().map(|&n| weno_error(n)).collect::<Result<Vec<_>>>()?;
    let mut checks: Vec<Check> = ns.iter().zip(&errs).map(|(n, e)| Check::info(&format!("max error n_x={n}"), *e)).collect();
    for w in 0..ns.len() - 1 {
        let slope = (errs[w] / errs[w + 1]).log2() / (ns[w + 1] as f64 / ns[w] as f64).log2();
        checks.push(Check::at_least(&format!("order {}->{}", ns[w], ns[w + 1]), slope, 4.0));
    }
    Ok(SuiteResult::new("weno", checks))
}

/// Max pointwise error of the solver against the periodic closed form on
/// `[0, 2π)` over `t ∈ [0, 2]`, and the same away from the front.
pub fn burgers1_errors(n: usize, n_saves: usize) -> Result<(f64, f64)> {
    let nu = BURGERS_NU;
    let grid = Grid::uniform(n, (0.0, 2.0 * PI), Boundary::Periodic)?;
    let u0: Vec<f64> = grid.centers().iter().map(|&x| burgers_case1(0.0, x, nu)).collect();
    let params = PdeParams::Combined { alpha: 0.5, beta: nu, gamma: 0.0 };
    let tr = integrate_from(&grid, &params, None, &u0, 0, n_saves, 2.0, &AdaptiveOptions::default())?;
    let (mut worst, mut away) = (0.0f64, 0.0f64);
    for k in 0..tr.n_t() {
        let t = tr.times[k];
        for (&x, &u) in grid.centers().iter().zip(tr.frame(k)) {
            let e = (u - burgers_case1(t, x, nu)).abs();
            worst = worst.max(e);
            // the front sits at x − 4t = π
            let xi = (x - 4.0 * t).rem_euclid(2.0 * PI);
            if (xi - PI).abs() > 0.3 {
                away = away.max(e);
            }
        }
    }
    Ok((worst, away))
}

pub fn burgers1_suite() -> Result<SuiteResult> {
    let (worst, away) = burgers1_errors(200, 21)?;
    Ok(SuiteResult::new(
        "burgers1",
        vec![
            Check::below("max pointwise error n_x=200", worst, 1e-2),
            Check::info("max error at least 0.3 from the front", away),
        ],
    ))
}

/// Max error of the solver's cell averages against cell averages of the
/// Gauss–Hermite closed form on `[-1, 1]`, `t ∈ (0, 3/π]`.
pub fn burgers2_error(n: usize, n_saves: usize, order: usize) -> Result<f64> {
    let nu = BURGERS_NU;
    let grid = Grid::uniform(n, (-1.0, 1.0), Boundary::Periodic)?;
    let e = grid.edges();
    let u0: Vec<f64> = (0..n)
        .map(|i| ((PI * e[i + 1]).cos() - (PI * e[i]).cos()) / (PI * (e[i + 1] - e[i])))
        .collect();
    let params = PdeParams::Combined { alpha: 0.5, beta: nu, gamma: 0.0 };
    let tr = integrate_from(&grid, &params, None, &u0, 0, n_saves, CASE2_T_MAX, &AdaptiveOptions::default())?;
    let (z, w) = gauss_hermite(order)?;
    let (gz, gw) = gauss_legendre(16)?;
    let mut worst = 0.0f64;
    for k in 1..tr.n_t() {
        let t = tr.times[k];
        for i in 0..n {
            let mut failed = None;
            let exact = cell_average(
                |x| {
                    burgers_case2_with(t, x, nu, &z, &w).unwrap_or_else(|err| {
                        failed = Some(err);
                        f64::NAN
                    })
                },
                e[i],
                e[i + 1],
                &gz,
                &gw,
            );
            if let Some(err) = failed {
                return Err(err);
            }
            worst = worst.max((tr.frame(k)[i] - exact).abs());
        }
    }
    Ok(worst)
}

/// Change of the closed form at `(t, x)` between quadrature orders.
pub fn burgers2_quadrature_gap(t: f64, x: f64, lo: usize, hi: usize) -> Result<f64> {
    let (za, wa) = gauss_hermite(lo)?;
    let (zb, wb) = gauss_hermite(hi)?;
    let a = burgers_case2_with(t, x, BURGERS_NU, &za, &wa)?;
    let b = burgers_case2_with(t, x, BURGERS_NU, &zb, &wb)?;
    Ok((a - b).abs())
}

/// Largest quadrature change over a grid of points; large only inside the
/// shock while it forms.
pub fn burgers2_quadrature_sweep(lo: usize, hi: usize) -> Result<f64> {
    let mut gap = 0.0f64;
    for k in 1..=10 {
        let t = CASE2_T_MAX * k as f64 / 10.0;
        for i in 0..=40 {
            gap = gap.max(burgers2_quadrature_gap(t, -1.0 + i as f64 / 20.0, lo, hi)?);
        }
    }
    Ok(gap)
}

pub fn burgers2_suite() -> Result<SuiteResult> {
    Ok(SuiteResult::new(
        "burgers2",
        vec![
            Check::below("max error n_x=200, Gauss-Hermite 64", burgers2_error(200, 31, 64)?, 2e-2),
            Check::below("quadrature change 64->128 at t=0.5, x=0.3", burgers2_quadrature_gap(0.5, 0.3, 64, 128)?, 1e-8),
            Check::info("largest quadrature change 64->128 over (t, x)", burgers2_quadrature_sweep(64, 128)?),
        ],
    ))
}

/// `|∫u(1) − ∫u(0)|` for unforced periodic Burgers at tight tolerance.
pub fn conservation_drift() -> Result<f64> {
    let grid = Grid::uniform(200, (0.0, 16.0), Boundary::Periodic)?;
    let u0: Vec<f64> = grid
        .centers()
        .iter()
        .map(|&x| (2.0 * PI * x / 16.0).sin() + 0.5 * (4.0 * PI * x / 16.0).cos() + 0.25)
        .collect();
    let params = PdeParams::Combined { alpha: 1.0, beta: 0.0, gamma: 0.0 };
    let opts = AdaptiveOptions {
        rtol: 1e-8,
        atol: 1e-10,
        ..AdaptiveOptions::default()
    };
    let tr = integrate_from(&grid, &params, None, &u0, 0, 11, 1.0, &opts)?;
    let mass = |u: &[f64]| u.iter().zip(grid.widths()).map(|(v, w)| v * w).sum::<f64>();
    let m0 = mass(tr.frame(0));
    Ok((0..tr.n_t()).map(|k| (mass(tr.frame(k)) - m0).abs()).fold(0.0, f64::max))
}

pub fn conservation_suite() -> Result<SuiteResult> {
    Ok(SuiteResult::new(
        "conservation",
        vec![Check::below("max |change of integral| over [0, 1]", conservation_drift()?, 1e-8)],
    ))
}

pub struct WaveCheck {
    /// Value at the reflected right-moving peak, relative to its free height.
    pub reflected_sign: f64,
    /// RMSE against the image solution at the final time.
    pub final_rmse: f64,
    /// Largest RMSE over all saved frames.
    pub max_rmse: f64,
}

/// Pulse at rest in the middle of `[-8, 8]`, `c = 2`, saved at
/// `(n_t, n_x)` on `[0, 16]`: one full round trip.
pub fn wave_check(left: Boundary, right: Boundary, n_t: usize, n_x: usize) -> Result<WaveCheck> {
    let domain = (-8.0, 8.0);
    let c = 2.0;
    let (x0, sigma) = (0.0, 0.5);
    let profile = |x: f64| (-((x - x0) / sigma).powi(2)).exp();
    let grid = Grid::chebyshev(n_x, domain, left, right)?;
    let u0: Vec<f64> = grid.centers().iter().map(|&x| profile(x)).collect();
    let params = PdeParams::wave(c, left, right);
    let tr = integrate_wave(&grid, &params, &u0, 0, n_t, 16.0)?;
    let mut max_rmse = 0.0f64;
    let mut final_rmse = 0.0;
    for k in 0..tr.n_t() {
        let t = tr.times[k];
        let se: f64 = grid
            .centers()
            .iter()
            .zip(tr.frame(k))
            .map(|(&x, &u)| (u - reflected_solution(profile, domain, left, right, c, t, x)).powi(2))
            .sum();
        let rmse = (se / n_x as f64).sqrt();
        max_rmse = max_rmse.max(rmse);
        final_rmse = rmse;
    }
    // at t = 6 the right-moving half has bounced off x = 8 and sits at x = 4
    let k = (0..tr.n_t()).min_by(|&a, &b| (tr.times[a] - 6.0).abs().total_cmp(&(tr.times[b] - 6.0).abs())).unwrap_or(0);
    let t = tr.times[k];
    let peak = 8.0 - (x0 + c * t - 8.0);
    let i = (0..n_x)
        .min_by(|&a, &b| (grid.centers()[a] - peak).abs().total_cmp(&(grid.centers()[b] - peak).abs()))
        .unwrap_or(0);
    Ok(WaveCheck {
        reflected_sign: tr.frame(k)[i] / 0.5,
        final_rmse,
        max_rmse,
    })
}

pub fn wave_suite() -> Result<SuiteResult> {
    let d = wave_check(Boundary::Dirichlet, Boundary::Dirichlet, 250, 200)?;
    let n = wave_check(Boundary::Neumann, Boundary::Neumann, 250, 200)?;
    Ok(SuiteResult::new(
        "wave",
        vec![
            Check::below("Dirichlet reflected peak (relative)", d.reflected_sign, -0.5),
            Check::at_least("Neumann reflected peak (relative)", n.reflected_sign, 0.5),
            Check::below("Dirichlet post-traversal RMSE", d.final_rmse, 5e-2),
            Check::below("Neumann post-traversal RMSE", n.final_rmse, 5e-2),
            Check::info("Dirichlet max RMSE over frames", d.max_rmse),
            Check::info("Neumann max RMSE over frames", n.max_rmse),
        ],
    ))
}
