//! One-dimensional cell grids.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Boundary {
    Periodic,
    Dirichlet,
    Neumann,
}

impl Boundary {
    /// Numeric code stored in dataset shards.
    pub fn code(self) -> f64 {
        match self {
            Boundary::Dirichlet => 0.0,
            Boundary::Neumann => 1.0,
            Boundary::Periodic => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code {
            c if c == 0.0 => Ok(Boundary::Dirichlet),
            c if c == 1.0 => Ok(Boundary::Neumann),
            c if c == 2.0 => Ok(Boundary::Periodic),
            c => Err(Error::Data(format!("unknown boundary code {c}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Uniform,
    Chebyshev,
    Irregular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    centers: Vec<f64>,
    edges: Vec<f64>,
    widths: Vec<f64>,
    domain: (f64, f64),
    left: Boundary,
    right: Boundary,
    kind: GridKind,
}

fn check_domain(n_x: usize, domain: (f64, f64)) -> Result<()> {
    if n_x < 3 {
        return Err(Error::InvalidGrid(format!("need at least 3 cells, got {n_x}")));
    }
    if !(domain.0.is_finite() && domain.1.is_finite() && domain.0 < domain.1) {
        return Err(Error::InvalidGrid(format!("bad domain {domain:?}")));
    }
    Ok(())
}

impl Grid {
    /// `n_x` equal cells on `domain`; centres sit at cell midpoints.
    pub fn uniform(n_x: usize, domain: (f64, f64), boundary: Boundary) -> Result<Self> {
        check_domain(n_x, domain)?;
        let (lo, hi) = domain;
        let dx = (hi - lo) / n_x as f64;
        let edges: Vec<f64> = (0..=n_x).map(|i| lo + i as f64 * dx).collect();
        let centers = (0..n_x).map(|i| lo + (i as f64 + 0.5) * dx).collect();
        Ok(Self {
            centers,
            widths: vec![dx; n_x],
            edges,
            domain,
            left: boundary,
            right: boundary,
            kind: GridKind::Uniform,
        })
    }

    /// Nodes at the interior Chebyshev extremal points `cos(iπ/(n_x+1))`,
    /// `i = 1..=n_x`, mapped affinely to `domain` and ordered increasingly.
    /// Cell edges are the domain ends and the midpoints between nodes.
    pub fn chebyshev(n_x: usize, domain: (f64, f64), left: Boundary, right: Boundary) -> Result<Self> {
        check_domain(n_x, domain)?;
        if left == Boundary::Periodic || right == Boundary::Periodic {
            return Err(Error::Unsupported(
                "Chebyshev grids need Dirichlet or Neumann boundaries".into(),
            ));
        }
        let centers: Vec<f64> = (1..=n_x).map(|i| map_chebyshev(i, n_x, domain)).collect();
        Self::bounded_from_centers(centers, domain, left, right, GridKind::Chebyshev)
    }

    /// Rebuilds a grid around a subset of centres, e.g. after striding.
    pub fn from_centers(
        centers: Vec<f64>,
        domain: (f64, f64),
        left: Boundary,
        right: Boundary,
    ) -> Result<Self> {
        check_domain(centers.len(), domain)?;
        if (left == Boundary::Periodic) != (right == Boundary::Periodic) {
            return Err(Error::InvalidGrid("periodic boundary must apply to both ends".into()));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("centres must increase strictly".into()));
        }
        if left != Boundary::Periodic {
            return Self::bounded_from_centers(centers, domain, left, right, GridKind::Irregular)
                .map(Grid::detect_uniform);
        }
        let len = domain.1 - domain.0;
        let n = centers.len();
        if centers[n - 1] - centers[0] >= len {
            return Err(Error::InvalidGrid("centres span more than one period".into()));
        }
        let first = 0.5 * (centers[n - 1] - len + centers[0]);
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(first);
        edges.extend(centers.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        edges.push(first + len);
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            centers,
            edges,
            widths,
            domain,
            left,
            right,
            kind: GridKind::Irregular,
        }
        .detect_uniform())
    }

    fn bounded_from_centers(
        centers: Vec<f64>,
        domain: (f64, f64),
        left: Boundary,
        right: Boundary,
        kind: GridKind,
    ) -> Result<Self> {
        let n = centers.len();
        if centers[0] <= domain.0 || centers[n - 1] >= domain.1 {
            return Err(Error::InvalidGrid("centres must lie inside the domain".into()));
        }
        let mut edges = Vec::with_capacity(n + 1);
        edges.push(domain.0);
        edges.extend(centers.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        edges.push(domain.1);
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self {
            centers,
            edges,
            widths,
            domain,
            left,
            right,
            kind,
        })
    }

    fn detect_uniform(mut self) -> Self {
        let w0 = self.widths[0];
        let centred = self.left != Boundary::Periodic
            || (self.centers[0] - self.edges[0] - 0.5 * w0).abs() <= 1e-12 * w0;
        if centred && self.widths.iter().all(|w| (w - w0).abs() <= 1e-9 * w0) {
            self.kind = GridKind::Uniform;
        }
        self
    }

    pub fn n_x(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn length(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn boundaries(&self) -> (Boundary, Boundary) {
        (self.left, self.right)
    }

    pub fn is_periodic(&self) -> bool {
        self.left == Boundary::Periodic
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Uniform spacing, if the grid has one.
    pub fn dx(&self) -> Option<f64> {
        (self.kind == GridKind::Uniform).then(|| self.widths[0])
    }

    /// `x_i − x_j`, wrapped to the minimal image on periodic grids. On
    /// uniform grids the value is an exact multiple of the spacing, so equal
    /// index offsets give bit-equal displacements.
    pub fn displacement(&self, j: usize, i: usize) -> f64 {
        if self.kind == GridKind::Uniform {
            let n = self.n_x() as i64;
            let mut k = i as i64 - j as i64;
            if self.is_periodic() {
                k = k.rem_euclid(n);
                if 2 * k > n {
                    k -= n;
                }
            }
            return k as f64 * self.widths[0];
        }
        let d = self.centers[i] - self.centers[j];
        if self.is_periodic() {
            wrap(d, self.length())
        } else {
            d
        }
    }
}

/// Minimal-image representative of `d` in `(−L/2, L/2]`.
pub fn wrap(d: f64, len: f64) -> f64 {
    let r = d - len * (d / len).round();
    if r <= -0.5 * len {
        r + len
    } else if r > 0.5 * len {
        r - len
    } else {
        r
    }
}

/// `i`-th Chebyshev extremal point of an `(n_x + 1)`-interval partition,
/// mapped so that `i = 0` lands on the lower domain end.
pub(crate) fn map_chebyshev(i: usize, n_x: usize, domain: (f64, f64)) -> f64 {
    let (lo, hi) = domain;
    let c = (i as f64 * PI / (n_x + 1) as f64).cos();
    0.5 * (lo + hi) - 0.5 * (hi - lo) * c
}
