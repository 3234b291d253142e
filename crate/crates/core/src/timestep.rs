//! Time integration for semi-discrete systems `u̇ = f(t, u)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coefficients `(a, b, c)` of an `s`-stage Runge-Kutta method.
#[derive(Clone, Debug, PartialEq)]
pub struct ButcherTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn rk4() -> Self {
        Self {
            a: vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.5, 0.0, 0.0, 0.0],
                vec![0.0, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
            ],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
        }
    }

    pub fn forward_euler() -> Self {
        Self {
            a: vec![vec![0.0]],
            b: vec![1.0],
            c: vec![0.0],
        }
    }

    /// Three-stage Radau IIA, order 5.
    pub fn radau_iia5() -> Self {
        let r6 = 6f64.sqrt();
        Self {
            a: vec![
                vec![(88.0 - 7.0 * r6) / 360.0, (296.0 - 169.0 * r6) / 1800.0, (-2.0 + 3.0 * r6) / 225.0],
                vec![(296.0 + 169.0 * r6) / 1800.0, (88.0 + 7.0 * r6) / 360.0, (-2.0 - 3.0 * r6) / 225.0],
                vec![(16.0 - r6) / 36.0, (16.0 + r6) / 36.0, 1.0 / 9.0],
            ],
            b: vec![(16.0 - r6) / 36.0, (16.0 + r6) / 36.0, 1.0 / 9.0],
            c: vec![(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn is_explicit(&self) -> bool {
        self.a.iter().enumerate().all(|(i, row)| row[i..].iter().all(|&v| v == 0.0))
    }

    /// Checks `Σ b = 1` and `c_i = Σ_j a_ij` to 1e−12.
    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if self.a.len() != s || self.c.len() != s || self.a.iter().any(|r| r.len() != s) {
            return Err(Error::Config("tableau dimensions disagree".into()));
        }
        if (self.b.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("tableau weights do not sum to 1".into()));
        }
        for (i, row) in self.a.iter().enumerate() {
            if (row.iter().sum::<f64>() - self.c[i]).abs() > 1e-12 {
                return Err(Error::Config(format!("row {i} of a does not sum to c_{i}")));
            }
        }
        Ok(())
    }
}

/// One explicit Runge-Kutta step of size `dt` from `(t, u)`.
pub fn rk_step<F>(tab: &ButcherTableau, f: &mut F, t: f64, u: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) {
        return Err(Error::Range(format!("step size must be positive, got {dt}")));
    }
    if !tab.is_explicit() {
        return Err(Error::Unsupported("rk_step needs an explicit tableau".into()));
    }
    let n = u.len();
    let s = tab.stages();
    let mut k = vec![vec![0.0; n]; s];
    let mut stage = vec![0.0; n];
    for i in 0..s {
        stage.copy_from_slice(u);
        for (j, kj) in k.iter().enumerate().take(i) {
            let a = tab.a[i][j];
            if a != 0.0 {
                stage.iter_mut().zip(kj).for_each(|(x, kv)| *x += dt * a * kv);
            }
        }
        f(t + tab.c[i] * dt, &stage, &mut k[i])?;
        if k[i].iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t, stage: i });
        }
    }
    let mut out = u.to_vec();
    for (bi, ki) in tab.b.iter().zip(&k) {
        out.iter_mut().zip(ki).for_each(|(x, kv)| *x += dt * bi * kv);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { t, stage: s });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; defaults to 1% of the first save interval.
    pub dt0: Option<f64>,
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            dt0: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveSolution {
    /// One state per save time.
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

const SAFETY: f64 = 0.9;
const GROW_MAX: f64 = 5.0;
const SHRINK_MIN: f64 = 0.1;

/// RK4 with step-doubling error control. Every save time is hit exactly;
/// a save time equal to `t0` stores `u0` unchanged.
pub fn integrate_adaptive<F>(
    f: &mut F,
    u0: &[f64],
    t0: f64,
    save_times: &[f64],
    opts: &AdaptiveOptions,
) -> Result<AdaptiveSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if save_times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Range("save times must increase strictly".into()));
    }
    if save_times.first().is_some_and(|&s| s < t0) {
        return Err(Error::Range("save times precede the initial time".into()));
    }
    if !(opts.rtol >= 0.0 && opts.atol >= 0.0 && opts.rtol + opts.atol > 0.0) {
        return Err(Error::Config("tolerances must be non-negative and not both zero".into()));
    }
    let tab = ButcherTableau::rk4();
    let span = save_times.last().map_or(0.0, |&e| e - t0);
    let min_dt = 1e-12 * span.max(f64::MIN_POSITIVE);
    let mut dt = opts.dt0.unwrap_or_else(|| {
        let first = save_times.iter().find(|&&s| s > t0).map_or(1.0, |&s| s - t0);
        0.01 * first
    });
    let mut t = t0;
    let mut u = u0.to_vec();
    let mut states = Vec::with_capacity(save_times.len());
    let (mut accepted, mut rejected) = (0, 0);
    for &target in save_times {
        while t < target {
            if accepted + rejected >= opts.max_steps {
                return Err(Error::Stiffness { t, dt });
            }
            let remaining = target - t;
            let landing = dt >= remaining;
            let h = if landing { remaining } else { dt };
            let full = rk_step(&tab, f, t, &u, h);
            let half = rk_step(&tab, f, t, &u, 0.5 * h)
                .and_then(|m| rk_step(&tab, f, t + 0.5 * h, &m, 0.5 * h));
            let (full, fine) = match (full, half) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e @ Error::BlowUp { .. }), _) | (_, Err(e @ Error::BlowUp { .. })) => {
                    // a blow-up inside a trial step is treated as a rejection
                    rejected += 1;
                    dt = h * SHRINK_MIN;
                    if dt < min_dt {
                        return Err(e);
                    }
                    continue;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let mut err: f64 = 0.0;
            for ((a, b), u0i) in full.iter().zip(&fine).zip(&u) {
                let scale = opts.atol + opts.rtol * u0i.abs().max(b.abs());
                err = err.max((a - b).abs() / scale);
            }
            let factor = if err == 0.0 {
                GROW_MAX
            } else {
                (SAFETY * err.powf(-0.2)).clamp(SHRINK_MIN, GROW_MAX)
            };
            if err <= 1.0 {
                accepted += 1;
                t = if landing { target } else { t + h };
                u = fine;
                // a shortened landing step says nothing about the natural step size
                if !landing || h >= dt {
                    dt = h * factor;
                }
            } else {
                rejected += 1;
                dt = h * factor;
                if dt < min_dt {
                    return Err(Error::Stiffness { t, dt });
                }
            }
        }
        states.push(u.clone());
    }
    Ok(AdaptiveSolution {
        states,
        accepted,
        rejected,
    })
}

/// Three-stage Radau IIA integration of `u̇ = A u` with a fixed number of
/// equal substeps per save interval. The stage system
/// `(I − dt·(a ⊗ A)) K = 1 ⊗ A u` is factorised once per distinct step size.
pub struct LinearRadau {
    a: DMatrix<f64>,
    factors: HashMap<u64, nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl LinearRadau {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Contract("system matrix must be square".into()));
        }
        Ok(Self {
            a,
            factors: HashMap::new(),
        })
    }

    fn factor(&mut self, dt: f64) -> Result<&nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let key = dt.to_bits();
        if !self.factors.contains_key(&key) {
            let n = self.a.nrows();
            let tab = ButcherTableau::radau_iia5();
            let mut m = DMatrix::<f64>::identity(3 * n, 3 * n);
            for i in 0..3 {
                for j in 0..3 {
                    let s = -dt * tab.a[i][j];
                    let mut block = m.view_mut((i * n, j * n), (n, n));
                    block += &self.a * s;
                }
            }
            let lu = m.lu();
            if !lu.is_invertible() {
                return Err(Error::Singular(format!("Radau stage system at dt={dt}")));
            }
            self.factors.insert(key, lu);
        }
        Ok(&self.factors[&key])
    }

    pub fn step(&mut self, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        let n = self.a.nrows();
        let au = &self.a * u;
        let mut rhs = DVector::zeros(3 * n);
        for i in 0..3 {
            rhs.rows_mut(i * n, n).copy_from(&au);
        }
        let k = self
            .factor(dt)?
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("Radau stage solve failed".into()))?;
        let tab = ButcherTableau::radau_iia5();
        let mut out = u.clone();
        for i in 0..3 {
            out.axpy(dt * tab.b[i], &k.rows(i * n, n), 1.0);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t: f64::NAN, stage: 3 });
        }
        Ok(out)
    }
}

/// Integrates `u̇ = A u` from `(t0, u0)` and returns the state at each save
/// time, taking `substeps` equal Radau IIA steps per interval.
pub fn linear_implicit_integrate(
    a: &DMatrix<f64>,
    u0: &[f64],
    t0: f64,
    save_times: &[f64],
    substeps: usize,
) -> Result<Vec<Vec<f64>>> {
    if a.nrows() != u0.len() {
        return Err(Error::Contract(format!(
            "matrix is {}x{} but state has {} values",
            a.nrows(),
            a.ncols(),
            u0.len()
        )));
    }
    if substeps == 0 {
        return Err(Error::Config("need at least one substep".into()));
    }
    if save_times.windows(2).any(|w| !(w[0] < w[1])) || save_times.first().is_some_and(|&s| s < t0) {
        return Err(Error::Range("save times must increase strictly from t0".into()));
    }
    let mut radau = LinearRadau::new(a.clone())?;
    let mut u = DVector::from_column_slice(u0);
    let mut t = t0;
    let mut out = Vec::with_capacity(save_times.len());
    for &target in save_times {
        if target > t {
            let dt = (target - t) / substeps as f64;
            for _ in 0..substeps {
                u = radau.step(&u, dt).map_err(|e| match e {
                    Error::BlowUp { stage, .. } => Error::BlowUp { t, stage },
                    e => e,
                })?;
            }
            t = target;
        }
        out.push(u.iter().copied().collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_rhs(_t: f64, _u: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }

    #[test]
    fn tableaux_are_consistent() {
        ButcherTableau::rk4().validate().unwrap();
        ButcherTableau::forward_euler().validate().unwrap();
        ButcherTableau::radau_iia5().validate().unwrap();
        assert!(ButcherTableau::rk4().is_explicit());
        assert!(!ButcherTableau::radau_iia5().is_explicit());
    }

    #[test]
    fn zero_rhs_leaves_state() {
        let u = vec![1.0, -2.0];
        let out = rk_step(&ButcherTableau::rk4(), &mut zero_rhs, 0.0, &u, 0.1).unwrap();
        assert_eq!(out, u);
        let sol = integrate_adaptive(&mut zero_rhs, &u, 0.0, &[0.5, 1.0], &AdaptiveOptions::default()).unwrap();
        assert!(sol.states.iter().all(|s| s == &u));
    }

    #[test]
    fn rk4_matches_taylor_polynomial() {
        let lambda = -0.7;
        let dt = 0.3;
        let mut f = |_t: f64, u: &[f64], out: &mut [f64]| {
            out[0] = lambda * u[0];
            Ok(())
        };
        let out = rk_step(&ButcherTableau::rk4(), &mut f, 0.0, &[1.0], dt).unwrap();
        let z: f64 = lambda * dt;
        let want = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        assert!((out[0] - want).abs() < 1e-15);
    }

    #[test]
    fn rk4_integrates_time_exactly() {
        let mut f = |t: f64, _u: &[f64], out: &mut [f64]| {
            out[0] = t;
            Ok(())
        };
        let dt = 0.25;
        let out = rk_step(&ButcherTableau::rk4(), &mut f, 0.0, &[0.0], dt).unwrap();
        assert!((out[0] - dt * dt / 2.0).abs() < 1e-16);
    }

    #[test]
    fn blow_up_reports_stage() {
        let mut f = |_t: f64, u: &[f64], out: &mut [f64]| {
            out[0] = if u[0] > 1.0 { f64::INFINITY } else { 1.0 };
            Ok(())
        };
        match rk_step(&ButcherTableau::rk4(), &mut f, 0.0, &[0.9], 1.0) {
            Err(Error::BlowUp { stage, .. }) => assert_eq!(stage, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adaptive_exponential_decay() {
        let mut f = |_t: f64, u: &[f64], out: &mut [f64]| {
            out[0] = -u[0];
            Ok(())
        };
        let opts = AdaptiveOptions { rtol: 1e-8, ..Default::default() };
        let sol = integrate_adaptive(&mut f, &[1.0], 0.0, &[1.0], &opts).unwrap();
        assert!((sol.states[0][0] - (-1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn adaptive_independent_of_initial_step() {
        let mut f = |t: f64, u: &[f64], out: &mut [f64]| {
            out[0] = u[1];
            out[1] = -u[0] + 0.1 * t.sin();
            Ok(())
        };
        let rtol = 1e-6;
        let mut results = Vec::new();
        for dt0 in [1e-4, 1e-2, 0.5] {
            let opts = AdaptiveOptions { rtol, dt0: Some(dt0), ..Default::default() };
            results.push(integrate_adaptive(&mut f, &[1.0, 0.0], 0.0, &[3.0], &opts).unwrap().states[0].clone());
        }
        for r in &results[1..] {
            for (a, b) in r.iter().zip(&results[0]) {
                assert!((a - b).abs() < 10.0 * rtol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn radau_scalar_decay() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let out = linear_implicit_integrate(&a, &[1.0], 0.0, &[1.0], 32).unwrap();
        assert!((out[0][0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn radau_zero_matrix_is_identity() {
        let a = DMatrix::zeros(3, 3);
        let out = linear_implicit_integrate(&a, &[1.0, 2.0, 3.0], 0.0, &[0.5, 2.0], 4).unwrap();
        assert!(out.iter().all(|s| s == &vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn radau_rotation_returns_after_one_period() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let period = 2.0 * std::f64::consts::PI;
        let out = linear_implicit_integrate(&a, &[1.0, 0.0], 0.0, &[period], 128).unwrap();
        let s = &out[0];
        assert!((s[0] - 1.0).abs() < 1e-6 && s[1].abs() < 1e-6);
        let norm2 = s[0] * s[0] + s[1] * s[1];
        assert!((norm2 - 1.0).abs() < 1e-8, "drift {}", norm2 - 1.0);
    }
}
