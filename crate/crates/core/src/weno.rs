//! Fifth-order WENO reconstruction with a Godunov numerical flux.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const LINEAR_WEIGHTS: [f64; 3] = [0.1, 0.6, 0.3];
const GODUNOV_SAMPLES: usize = 129;

/// Scalar flux function `f(u)`.
pub enum Flux {
    /// `a·u² + b·u + c`; Godunov extrema in closed form.
    Quadratic { a: f64, b: f64, c: f64 },
    /// Anything else; Godunov extrema by dense sampling.
    General(Box<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Flux {
    pub fn burgers() -> Self {
        Flux::Quadratic { a: 0.5, b: 0.0, c: 0.0 }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Flux::Quadratic { a, b, c } => (a * u + b) * u + c,
            Flux::General(f) => f(u),
        }
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(Error::NumericInput(format!("value {} at position {k}", values[k]))),
        None => Ok(()),
    }
}

/// Smoothness indicators of the three substencils of `u_{i−2..i+2}`.
pub fn smoothness_left(w: &[f64; 5]) -> Result<[f64; 3]> {
    check_finite(w)?;
    Ok(betas(w))
}

#[inline]
fn betas(w: &[f64; 5]) -> [f64; 3] {
    let [a, b, c, d, e] = *w;
    let q = 13.0 / 12.0;
    [
        q * (a - 2.0 * b + c).powi(2) + 0.25 * (a - 4.0 * b + 3.0 * c).powi(2),
        q * (b - 2.0 * c + d).powi(2) + 0.25 * (b - d).powi(2),
        q * (c - 2.0 * d + e).powi(2) + 0.25 * (3.0 * c - 4.0 * d + e).powi(2),
    ]
}

/// Normalised nonlinear weights `w̃_k / Σ w̃` with `w̃_k = γ_k / (ε + β_k)²`.
pub fn nonlinear_weights(w: &[f64; 5], eps: f64) -> Result<[f64; 3]> {
    check_finite(w)?;
    Ok(weights(&betas(w), eps))
}

#[inline]
fn weights(beta: &[f64; 3], eps: f64) -> [f64; 3] {
    let t = [
        LINEAR_WEIGHTS[0] / (eps + beta[0]).powi(2),
        LINEAR_WEIGHTS[1] / (eps + beta[1]).powi(2),
        LINEAR_WEIGHTS[2] / (eps + beta[2]).powi(2),
    ];
    let s = t[0] + t[1] + t[2];
    [t[0] / s, t[1] / s, t[2] / s]
}

#[inline]
fn left_unchecked(w: &[f64; 5], eps: f64) -> f64 {
    let [a, b, c, d, e] = *w;
    let cand = [
        a / 3.0 - 7.0 / 6.0 * b + 11.0 / 6.0 * c,
        -b / 6.0 + 5.0 / 6.0 * c + d / 3.0,
        c / 3.0 + 5.0 / 6.0 * d - e / 6.0,
    ];
    let wt = weights(&betas(w), eps);
    wt[0] * cand[0] + wt[1] * cand[1] + wt[2] * cand[2]
}

/// `û⁻_{i+1/2}` from the window `u_{i−2..i+2}`.
pub fn weno5_left(w: &[f64; 5], eps: f64) -> Result<f64> {
    check_finite(w)?;
    Ok(left_unchecked(w, eps))
}

/// `û⁺_{i−1/2}` from the window `u_{i−2..i+2}`: the mirror image of the left
/// reconstruction.
pub fn weno5_right(w: &[f64; 5], eps: f64) -> Result<f64> {
    check_finite(w)?;
    Ok(left_unchecked(&[w[4], w[3], w[2], w[1], w[0]], eps))
}

/// Godunov flux: min of `f` over `[u⁻, u⁺]` when `u⁻ ≤ u⁺`, else max over `[u⁺, u⁻]`.
pub fn godunov_flux(flux: &Flux, um: f64, up: f64) -> Result<f64> {
    if !um.is_finite() || !up.is_finite() {
        return Err(Error::NumericInput(format!("u⁻={um}, u⁺={up}")));
    }
    Ok(godunov_unchecked(flux, um, up))
}

#[inline]
fn godunov_unchecked(flux: &Flux, um: f64, up: f64) -> f64 {
    let (lo, hi, take_min) = if um <= up { (um, up, true) } else { (up, um, false) };
    match *flux {
        Flux::Quadratic { a, b, .. } => {
            let (flo, fhi) = (flux.eval(lo), flux.eval(hi));
            let ends = if take_min { flo.min(fhi) } else { flo.max(fhi) };
            // the vertex is an interior extremum of the right kind only for
            // convex-min or concave-max
            if a != 0.0 && ((a > 0.0) == take_min) {
                let v = (-b / (2.0 * a)).clamp(lo, hi);
                let fv = flux.eval(v);
                if take_min { ends.min(fv) } else { ends.max(fv) }
            } else {
                ends
            }
        }
        Flux::General(ref f) => {
            let mut best = f(lo);
            for k in 1..GODUNOV_SAMPLES {
                let u = if k == GODUNOV_SAMPLES - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (GODUNOV_SAMPLES - 1) as f64
                };
                let v = f(u);
                best = if take_min { best.min(v) } else { best.max(v) };
            }
            best
        }
    }
}

/// Scratch space for repeated flux-divergence evaluations.
pub struct WenoWorkspace {
    pub eps: f64,
    pub gamma: [f64; 3],
    fluxes: Vec<f64>,
}

impl Default for WenoWorkspace {
    fn default() -> Self {
        Self::new(DEFAULT_EPS)
    }
}

impl WenoWorkspace {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            gamma: LINEAR_WEIGHTS,
            fluxes: Vec::new(),
        }
    }

    /// `out_i = (f̂_{i+1/2} − f̂_{i−1/2}) / Δx_i` on a periodic grid.
    pub fn flux_divergence(&mut self, u: &[f64], grid: &Grid, flux: &Flux, out: &mut [f64]) -> Result<()> {
        let n = u.len();
        if !grid.is_periodic() {
            return Err(Error::Unsupported("WENO flux divergence needs a periodic grid".into()));
        }
        if n != grid.n_x() || out.len() != n {
            return Err(Error::Contract(format!(
                "field has {n} values, grid {}, output {}",
                grid.n_x(),
                out.len()
            )));
        }
        if n < 5 {
            return Err(Error::InvalidGrid(format!("WENO5 needs at least 5 cells, got {n}")));
        }
        check_finite(u)?;
        let at = |k: isize| u[k.rem_euclid(n as isize) as usize];
        self.fluxes.resize(n, 0.0);
        // fluxes[i] holds f̂_{i+1/2}
        for i in 0..n {
            let i = i as isize;
            let um = left_unchecked(&[at(i - 2), at(i - 1), at(i), at(i + 1), at(i + 2)], self.eps);
            let up = left_unchecked(&[at(i + 3), at(i + 2), at(i + 1), at(i), at(i - 1)], self.eps);
            self.fluxes[i as usize] = godunov_unchecked(flux, um, up);
        }
        let widths = grid.widths();
        for i in 0..n {
            let prev = self.fluxes[(i + n - 1) % n];
            out[i] = (self.fluxes[i] - prev) / widths[i];
        }
        Ok(())
    }
}

/// Allocating convenience wrapper around [`WenoWorkspace::flux_divergence`].
pub fn weno5_flux_divergence(u: &[f64], grid: &Grid, flux: &Flux, eps: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.len()];
    WenoWorkspace::new(eps).flux_divergence(u, grid, flux, &mut out)?;
    Ok(out)
}
