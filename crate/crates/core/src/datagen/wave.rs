//! Wave-equation groundtruth on Chebyshev grids.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::combined::save_times;
use crate::datagen::task::PdeParams;
use crate::datagen::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, GridKind};
use crate::timestep::linear_implicit_integrate;

/// Radau substeps per save interval.
pub const WAVE_SUBSTEPS: usize = 4;

/// `u(0, x) = A exp(−((x − x0)/σ)²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Pulse {
    /// Width in `[0.3, 0.8]`, centre uniform in the interior 80% of `domain`.
    pub fn sample(rng: &mut ChaCha8Rng, domain: (f64, f64)) -> Self {
        let (lo, hi) = domain;
        let pad = 0.1 * (hi - lo);
        Self {
            amplitude: 1.0,
            width: rng.random_range(0.3..=0.8),
            center: rng.random_range(lo + pad..=hi - pad),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.width;
        self.amplitude * (-z * z).exp()
    }
}

/// The grid's nodes with the two domain ends prepended and appended.
pub fn chebyshev_points(grid: &Grid) -> Result<Vec<f64>> {
    if grid.kind() != GridKind::Chebyshev {
        return Err(Error::Unsupported("spectral derivatives need a Chebyshev grid".into()));
    }
    let (lo, hi) = grid.domain();
    let mut pts = Vec::with_capacity(grid.n_x() + 2);
    pts.push(lo);
    pts.extend_from_slice(grid.centers());
    pts.push(hi);
    Ok(pts)
}

/// Barycentric differentiation matrix on [`chebyshev_points`], size `n_x + 2`.
pub fn chebyshev_diff_matrix(grid: &Grid) -> Result<DMatrix<f64>> {
    Ok(barycentric_diff_matrix(&chebyshev_points(grid)?))
}

/// `D_ij = (w_j/w_i)/(x_i − x_j)`, `D_ii = −Σ_{j≠i} D_ij`. Weights are kept as
/// log-magnitude and sign to avoid overflow for a few hundred nodes.
pub fn barycentric_diff_matrix(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut logw = vec![0.0; n];
    let mut sign = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                let d = x[j] - x[k];
                logw[j] -= d.abs().ln();
                if d < 0.0 {
                    sign[j] = -sign[j];
                }
            }
        }
    }
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = sign[i] * sign[j] * (logw[j] - logw[i]).exp() / (x[i] - x[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    d
}

/// Second-derivative operator on the interior nodes with the boundary values
/// eliminated: Dirichlet ends pin `u = 0`, Neumann ends pin `∂x u = 0` using
/// the first-derivative boundary rows.
pub fn wave_laplacian(grid: &Grid) -> Result<DMatrix<f64>> {
    let d = chebyshev_diff_matrix(grid)?;
    let n = grid.n_x();
    let m = n + 2;
    let d2 = &d * &d;
    let (left, right) = grid.boundaries();
    // boundary values u_b = B u_I from M u_b = R u_I
    let mut mm = Matrix2::zeros();
    let mut r = DMatrix::zeros(2, n);
    for (row, (bc, node)) in [(left, 0), (right, m - 1)].into_iter().enumerate() {
        match bc {
            Boundary::Dirichlet => mm[(row, row)] = 1.0,
            Boundary::Neumann => {
                mm[(row, 0)] = d[(node, 0)];
                mm[(row, 1)] = d[(node, m - 1)];
                for j in 0..n {
                    r[(row, j)] = -d[(node, j + 1)];
                }
            }
            Boundary::Periodic => {
                return Err(Error::Unsupported("wave operator needs non-periodic ends".into()));
            }
        }
    }
    let inv = mm
        .try_inverse()
        .ok_or_else(|| Error::Singular("boundary closure".into()))?;
    let b = DMatrix::from_column_slice(2, 2, inv.as_slice()) * r;
    let mut lap = d2.view((1, 1), (n, n)).into_owned();
    for i in 0..n {
        for j in 0..n {
            lap[(i, j)] += d2[(i + 1, 0)] * b[(0, j)] + d2[(i + 1, m - 1)] * b[(1, j)];
        }
    }
    Ok(lap)
}

/// Boundary values implied by the closure for interior values `u`.
pub fn boundary_values(grid: &Grid, u: &[f64]) -> Result<(f64, f64)> {
    let d = chebyshev_diff_matrix(grid)?;
    let m = grid.n_x() + 2;
    let (left, right) = grid.boundaries();
    let mut mm = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for (row, (bc, node)) in [(left, 0), (right, m - 1)].into_iter().enumerate() {
        if bc == Boundary::Neumann {
            mm[(row, 0)] = d[(node, 0)];
            mm[(row, 1)] = d[(node, m - 1)];
            rhs[row] = -(0..u.len()).map(|j| d[(node, j + 1)] * u[j]).sum::<f64>();
        } else {
            mm[(row, row)] = 1.0;
        }
    }
    let sol = mm
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("boundary closure".into()))?;
    Ok((sol[0], sol[1]))
}

/// First-order system `[u, v]˙ = [v, c² L u]`.
pub fn wave_system(grid: &Grid, c: f64) -> Result<DMatrix<f64>> {
    let lap = wave_laplacian(grid)?;
    let n = grid.n_x();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).fill_with_identity();
    a.view_mut((n, 0), (n, n)).copy_from(&(lap * (c * c)));
    Ok(a)
}

/// Integrates the wave equation from `u0` at rest on a Chebyshev grid.
pub fn integrate_wave(
    grid: &Grid,
    params: &PdeParams,
    u0: &[f64],
    seed: u64,
    n_t: usize,
    t_end: f64,
) -> Result<Trajectory> {
    let PdeParams::Wave { c, left, right } = *params else {
        return Err(Error::Config("wave generation needs wave parameters".into()));
    };
    params.validate()?;
    if grid.boundaries() != (left, right) {
        return Err(Error::Contract("grid boundaries disagree with parameters".into()));
    }
    if n_t < 2 || !(t_end > 0.0) {
        return Err(Error::Config(format!("need n_t ≥ 2 and t_end > 0, got {n_t}, {t_end}")));
    }
    let n = grid.n_x();
    let a = wave_system(grid, c)?;
    let mut state = u0.to_vec();
    state.resize(2 * n, 0.0);
    let times = save_times(n_t, t_end);
    let states = linear_implicit_integrate(&a, &state, 0.0, &times, WAVE_SUBSTEPS).map_err(|e| {
        Error::Generation {
            seed,
            params: params.to_string(),
            source: Box::new(e),
        }
    })?;
    let mut data = Vec::with_capacity(n_t * n);
    for s in &states {
        data.extend_from_slice(&s[..n]);
    }
    Ok(Trajectory {
        data,
        times,
        grid: grid.clone(),
        params: *params,
        forcing: None,
        seed,
    })
}

/// Gaussian pulse released at rest.
pub fn generate_wave(
    params: &PdeParams,
    pulse: &Pulse,
    seed: u64,
    n_t: usize,
    n_x: usize,
    domain: (f64, f64),
    t_end: f64,
) -> Result<Trajectory> {
    let PdeParams::Wave { left, right, .. } = *params else {
        return Err(Error::Config("wave generation needs wave parameters".into()));
    };
    let grid = Grid::chebyshev(n_x, domain, left, right)?;
    let u0: Vec<f64> = grid.centers().iter().map(|&x| pulse.eval(x)).collect();
    integrate_wave(&grid, params, &u0, seed, n_t, t_end)
}

/// d'Alembert solution for an initial profile at rest, extended past each
/// wall by odd (Dirichlet) or even (Neumann) reflection.
pub fn reflected_solution<F: Fn(f64) -> f64>(
    profile: F,
    domain: (f64, f64),
    left: Boundary,
    right: Boundary,
    c: f64,
    t: f64,
    x: f64,
) -> f64 {
    let fold = |mut y: f64| {
        let (a, b) = domain;
        let mut s = 1.0;
        while y < a || y > b {
            if y < a {
                y = 2.0 * a - y;
                if left == Boundary::Dirichlet {
                    s = -s;
                }
            } else {
                y = 2.0 * b - y;
                if right == Boundary::Dirichlet {
                    s = -s;
                }
            }
        }
        s * profile(y)
    };
    0.5 * (fold(x - c * t) + fold(x + c * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cheb(n: usize, l: Boundary, r: Boundary) -> Grid {
        Grid::chebyshev(n, (-8.0, 8.0), l, r).unwrap()
    }

    #[test]
    fn derivative_of_constant_and_linear() {
        let g = cheb(40, Boundary::Dirichlet, Boundary::Dirichlet);
        let d = chebyshev_diff_matrix(&g).unwrap();
        let x = chebyshev_points(&g).unwrap();
        let m = x.len();
        for i in 0..m {
            let row = d.row(i);
            let c: f64 = row.iter().sum();
            let l: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(c.abs() < 1e-10);
            assert!((l - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_on_polynomials() {
        let n = 16;
        let g = cheb(n, Boundary::Dirichlet, Boundary::Neumann);
        let d = chebyshev_diff_matrix(&g).unwrap();
        let x = chebyshev_points(&g).unwrap();
        // degree n − 1 in the scaled variable s = x/8
        let p = |s: f64| (0..n).map(|k| (k as f64 + 1.0).recip() * s.powi(k as i32)).sum::<f64>();
        let dp = |s: f64| (1..n).map(|k| k as f64 / (k as f64 + 1.0) * s.powi(k as i32 - 1)).sum::<f64>() / 8.0;
        let vals: Vec<f64> = x.iter().map(|&v| p(v / 8.0)).collect();
        for (i, &xi) in x.iter().enumerate() {
            let got: f64 = d.row(i).iter().zip(&vals).map(|(a, b)| a * b).sum();
            assert!((got - dp(xi / 8.0)).abs() < 1e-6, "{i}: {got} vs {}", dp(xi / 8.0));
        }
    }

    #[test]
    fn laplacian_respects_boundary_conditions() {
        // u = cos(πx/16) vanishes at ±8; u = cos(πx/8) has zero slope at ±8
        for (bc, k) in [(Boundary::Dirichlet, 16.0), (Boundary::Neumann, 8.0)] {
            let g = cheb(48, bc, bc);
            let lap = wave_laplacian(&g).unwrap();
            let w = std::f64::consts::PI / k;
            let u = nalgebra::DVector::from_iterator(48, g.centers().iter().map(|x| (w * x).cos()));
            let lu = &lap * &u;
            for (i, x) in g.centers().iter().enumerate() {
                assert!((lu[i] + w * w * (w * x).cos()).abs() < 1e-7, "{bc:?} {i}");
            }
        }
    }

    #[test]
    fn zero_pulse_zero_trajectory() {
        let p = PdeParams::wave(2.0, Boundary::Dirichlet, Boundary::Neumann);
        let pulse = Pulse { amplitude: 0.0, center: 0.0, width: 0.5 };
        let t = generate_wave(&p, &pulse, 0, 10, 30, (-8.0, 8.0), 2.0).unwrap();
        assert!(t.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_reflection_oracle() {
        let pulse = Pulse { amplitude: 1.0, center: 1.0, width: 0.6 };
        for (l, r) in [
            (Boundary::Dirichlet, Boundary::Dirichlet),
            (Boundary::Neumann, Boundary::Neumann),
            (Boundary::Dirichlet, Boundary::Neumann),
        ] {
            let p = PdeParams::wave(2.0, l, r);
            let traj = generate_wave(&p, &pulse, 0, 65, 120, (-8.0, 8.0), 8.0).unwrap();
            let mut worst: f64 = 0.0;
            for (k, &t) in traj.times.iter().enumerate() {
                for (i, &x) in traj.grid.centers().iter().enumerate() {
                    let want = reflected_solution(|y| pulse.eval(y), (-8.0, 8.0), l, r, 2.0, t, x);
                    worst = worst.max((traj.frame(k)[i] - want).abs());
                }
            }
            assert!(worst < 1e-3, "{l:?}/{r:?}: {worst}");
        }
    }

    #[test]
    fn reflection_signs() {
        let prof = |y: f64| (-(y * y)).exp();
        let d = reflected_solution(prof, (-8.0, 8.0), Boundary::Dirichlet, Boundary::Dirichlet, 2.0, 8.0, 0.0);
        let n = reflected_solution(prof, (-8.0, 8.0), Boundary::Neumann, Boundary::Neumann, 2.0, 8.0, 0.0);
        assert!((d + 1.0).abs() < 1e-12);
        assert!((n - 1.0).abs() < 1e-12);
    }
}
