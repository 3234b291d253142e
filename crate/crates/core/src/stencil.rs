//! Finite-difference and finite-volume stencils from arbitrary point sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition numbers above this flag a stencil as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e14;

/// Falling factorial `i(i−1)⋯(i−m+1)`, with `(i)_0 = 1`.
pub fn pochhammer(i: u64, m: u64) -> u64 {
    if m > i {
        return 0;
    }
    (0..m).map(|k| i - k).product()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    /// Positions of the samples the coefficients act on.
    pub points: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub order: usize,
    pub eval_point: f64,
    /// 1-norm condition number of the shifted Vandermonde matrix.
    pub condition: f64,
}

impl Stencil {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }

    pub fn apply(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().zip(values).map(|(c, v)| c * v).sum()
    }
}

/// Coefficients acting on cell averages. `points` holds the cell edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionStencil {
    pub edges: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub order: usize,
    pub eval_point: f64,
    pub condition: f64,
}

impl ReconstructionStencil {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }

    pub fn apply(&self, averages: &[f64]) -> f64 {
        self.coeffs.iter().zip(averages).map(|(c, v)| c * v).sum()
    }
}

/// Solves `Xᵀ s = x^{(m)}` where `X_{kn} = (p_k − x0)^n`. At the shifted
/// origin `x^{(m)}` has the single entry `m!` at position `m`.
fn derivative_weights(points: &[f64], x0: f64, m: usize) -> Result<(Vec<f64>, f64)> {
    let n = points.len();
    if m >= n {
        return Err(Error::Range(format!(
            "derivative order {m} needs more than {n} points"
        )));
    }
    if points.iter().any(|p| !p.is_finite()) || !x0.is_finite() {
        return Err(Error::NumericInput("stencil points must be finite".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Singular("duplicate stencil points".into()));
    }
    let vt = DMatrix::from_fn(n, n, |row, col| (points[col] - x0).powi(row as i32));
    let lu = vt.clone().lu();
    let mut rhs = DVector::zeros(n);
    rhs[m] = pochhammer(m as u64, m as u64) as f64;
    let s = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Vandermonde system is singular".into()))?;
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular("Vandermonde system is singular".into()))?;
    let condition = norm1(&vt) * norm1(&inv);
    if s.iter().any(|c| !c.is_finite()) {
        return Err(Error::Singular("Vandermonde solve produced non-finite weights".into()));
    }
    Ok((s.iter().copied().collect(), condition))
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Weights `s` with `s·u ≈ u^{(m)}(eval_point)`, exact for polynomials of
/// degree below `points.len()`.
pub fn interpolation_stencil(points: &[f64], eval_point: f64, m: usize) -> Result<Stencil> {
    let (coeffs, condition) = derivative_weights(points, eval_point, m)?;
    Ok(Stencil {
        points: points.to_vec(),
        coeffs,
        order: m,
        eval_point,
        condition,
    })
}

/// Weights acting on the averages of the cells bounded by `edges`, giving
/// the `m`-th derivative at `eval_point` of the reconstructed polynomial.
/// Built by fitting the primitive at the edges and differentiating `m + 1` times.
pub fn reconstruction_stencil(edges: &[f64], eval_point: f64, m: usize) -> Result<ReconstructionStencil> {
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidGrid("cell edges must increase strictly".into()));
    }
    if m + 1 >= edges.len() {
        return Err(Error::Range(format!(
            "derivative order {m} needs more than {} cells",
            edges.len().saturating_sub(1)
        )));
    }
    let (t, condition) = derivative_weights(edges, eval_point, m + 1)?;
    // s̄_l = Δx_l · Σ_{k > l} t_k, the product with the lower-triangular L
    let cells = edges.len() - 1;
    let mut coeffs = vec![0.0; cells];
    let mut tail = 0.0;
    for l in (0..cells).rev() {
        tail += t[l + 1];
        coeffs[l] = tail * (edges[l + 1] - edges[l]);
    }
    Ok(ReconstructionStencil {
        edges: edges.to_vec(),
        coeffs,
        order: m,
        eval_point,
        condition,
    })
}

/// Centred stencil on a uniform lattice with `half` points on each side.
pub fn centered_uniform(h: f64, half: usize, m: usize) -> Result<Stencil> {
    let points: Vec<f64> = (-(half as i64)..=half as i64).map(|k| k as f64 * h).collect();
    interpolation_stencil(&points, 0.0, m)
}
