//! Closed-form viscous Burgers solutions `u_t + u u_x = ν u_xx`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Periodic sawtooth on `[0, 2π)` travelling at speed 4:
/// `u = −2ν φ_x/φ + 4` with `φ = exp(−ξ²/(4ν(t+1))) + exp(−(ξ−2π)²/(4ν(t+1)))`,
/// `ξ = x − 4t`. Evaluated with `ξ` folded into `[0, 2π)`.
pub fn burgers_case1(t: f64, x: f64, nu: f64) -> f64 {
    let xi = (x - 4.0 * t).rem_euclid(2.0 * PI);
    let s = 4.0 * nu * (t + 1.0);
    let a = xi;
    let b = xi - 2.0 * PI;
    // φ_x/φ = −(2/s)(a e_a + b e_b)/(e_a + e_b); factor out the larger exponent
    let (ea, eb) = (-a * a / s, -b * b / s);
    let m = ea.max(eb);
    let (wa, wb) = ((ea - m).exp(), (eb - m).exp());
    let ratio = -(2.0 / s) * (a * wa + b * wb) / (wa + wb);
    -2.0 * nu * ratio + 4.0
}

/// Gauss–Hermite nodes and weights for `∫ g(z) e^{−z²} dz` (Golub–Welsch).
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::Range("quadrature order must be positive".into()));
    }
    let mut j = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    Ok(symmetric_rule(j, PI.sqrt()))
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` (Golub–Welsch).
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::Range("quadrature order must be positive".into()));
    }
    let mut j = DMatrix::zeros(order, order);
    for k in 1..order {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    Ok(symmetric_rule(j, 2.0))
}

fn symmetric_rule(j: DMatrix<f64>, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let order = j.nrows();
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrise to remove eigensolver noise
    let n = pairs.len();
    for k in 0..n / 2 {
        let z = 0.5 * (pairs[n - 1 - k].0 - pairs[k].0);
        let w = 0.5 * (pairs[n - 1 - k].1 + pairs[k].1);
        pairs[k] = (-z, w);
        pairs[n - 1 - k] = (z, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Mean of `f` over `[a, b]` with a Gauss–Legendre rule on `[−1, 1]`.
pub fn cell_average<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    0.5 * nodes.iter().zip(weights).map(|(z, w)| w * f(mid + half * z)).sum::<f64>()
}

/// Latest time for which [`burgers_case2`] is accepted.
pub const CASE2_T_MAX: f64 = 3.0 / PI;

/// Solution from `u(0, x) = −sin(πx)` with `u(±1) = 0`:
/// `u = −∫ sin(π(x−η)) f(x−η) e^{−η²/4νt} dη / ∫ f(x−η) e^{−η²/4νt} dη`,
/// `f(y) = exp(−cos(πy)/(2πν))`, by Gauss–Hermite after `η = 2√(νt) z`.
pub fn burgers_case2(t: f64, x: f64, nu: f64, quad_order: usize) -> Result<f64> {
    let (z, w) = gauss_hermite(quad_order)?;
    burgers_case2_with(t, x, nu, &z, &w)
}

/// [`burgers_case2`] with precomputed quadrature.
pub fn burgers_case2_with(t: f64, x: f64, nu: f64, nodes: &[f64], weights: &[f64]) -> Result<f64> {
    if !(t > 0.0 && t <= CASE2_T_MAX) {
        return Err(Error::Range(format!("t={t} outside (0, 3/π]")));
    }
    if !(nu > 0.0) {
        return Err(Error::Range(format!("viscosity must be positive, got {nu}")));
    }
    let scale = 2.0 * (nu * t).sqrt();
    let expo: Vec<f64> = nodes
        .iter()
        .map(|&z| -(PI * (x - scale * z)).cos() / (2.0 * PI * nu))
        .collect();
    let m = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for ((&z, &wk), &e) in nodes.iter().zip(weights).zip(&expo) {
        let f = wk * (e - m).exp();
        num += (PI * (x - scale * z)).sin() * f;
        den += f;
    }
    Ok(-num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case1_symmetric_point() {
        for t in [0.0, 0.3, 1.7] {
            let x = PI + 4.0 * t;
            assert!((burgers_case1(t, x, 0.05) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn case1_initial_condition() {
        let nu: f64 = 0.1;
        for x in [0.2, 1.0, 3.0, 5.5] {
            let pa = (-x * x / (4.0 * nu)).exp();
            let pb = (-(x - 2.0 * PI).powi(2) / (4.0 * nu)).exp();
            let dphi = -x / (2.0 * nu) * pa - (x - 2.0 * PI) / (2.0 * nu) * pb;
            let want = -2.0 * nu * dphi / (pa + pb) + 4.0;
            assert!((burgers_case1(0.0, x, nu) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn case1_far_from_front_is_linear() {
        // one Gaussian dominates: u → 4 + ξ/(t+1)
        let (t, nu) = (0.5, 0.005);
        let x = 4.0 * t + 1.0;
        assert!((burgers_case1(t, x, nu) - (4.0 + 1.0 / 1.5)).abs() < 1e-10);
    }

    #[test]
    fn hermite_integrates_polynomials() {
        let (z, w) = gauss_hermite(20).unwrap();
        let m0: f64 = w.iter().sum();
        let m2: f64 = z.iter().zip(&w).map(|(z, w)| z * z * w).sum();
        let m4: f64 = z.iter().zip(&w).map(|(z, w)| z.powi(4) * w).sum();
        assert!((m0 - PI.sqrt()).abs() < 1e-13);
        assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-13);
        assert!((m4 - 0.75 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (z, w) = gauss_legendre(5).unwrap();
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let m8: f64 = z.iter().zip(&w).map(|(z, w)| z.powi(8) * w).sum();
        assert!((m8 - 2.0 / 9.0).abs() < 1e-14);
        let avg = cell_average(|x| x * x, 0.0, 3.0, &z, &w);
        assert!((avg - 3.0).abs() < 1e-13);
    }

    #[test]
    fn case2_odd_symmetry() {
        assert!(burgers_case2(0.4, 0.0, 0.005, 64).unwrap().abs() < 1e-13);
        for (t, x) in [(0.1, 0.3), (0.5, 0.8), (0.9, 0.05)] {
            let a = burgers_case2(t, x, 0.005, 64).unwrap();
            let b = burgers_case2(t, -x, 0.005, 64).unwrap();
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn case2_quadrature_converges() {
        let a = burgers_case2(0.5, 0.3, 0.005, 64).unwrap();
        let b = burgers_case2(0.5, 0.3, 0.005, 128).unwrap();
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn case2_early_time_matches_initial_condition() {
        let u = burgers_case2(1e-4, 0.4, 0.005, 64).unwrap();
        assert!((u + (0.4 * PI).sin()).abs() < 1e-3);
    }

    #[test]
    fn case2_rejects_late_times() {
        assert!(burgers_case2(1.0, 0.1, 0.005, 64).is_err());
        assert!(burgers_case2(0.0, 0.1, 0.005, 64).is_err());
    }
}
