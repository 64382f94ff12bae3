//! Rectangular domains, uniform node grids and node-valued fields.
//!
//! Nodes are addressed with zero-based `(i, j)`, `i` along x. Field storage is
//! row-major with `i` as the fast index: `values[i + n * j]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    pub x0: f64,
    pub y0: f64,
    /// Width.
    pub lx: f64,
    /// Height.
    pub ly: f64,
}

impl RectDomain {
    pub fn new(x0: f64, y0: f64, lx: f64, ly: f64) -> Result<Self> {
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "domain extents must be positive, got {lx} x {ly}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidGrid("domain origin must be finite".into()));
        }
        Ok(Self { x0, y0, lx, ly })
    }

    /// The square `[-1, 1]^2` used throughout the experiments.
    pub fn unit_square_sym() -> Self {
        Self {
            x0: -1.0,
            y0: -1.0,
            lx: 2.0,
            ly: 2.0,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x0 + 0.5 * self.lx, self.y0 + 0.5 * self.ly)
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0 && p.0 <= self.x0 + self.lx && p.1 >= self.y0 && p.1 <= self.y0 + self.ly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: RectDomain,
    pub n: usize,
    pub m: usize,
    pub h1: f64,
    pub h2: f64,
}

impl Grid {
    pub fn new(domain: RectDomain, n: usize, m: usize) -> Result<Self> {
        if n < 3 || m < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3x3 nodes for an interior node, got {n}x{m}"
            )));
        }
        let domain = RectDomain::new(domain.x0, domain.y0, domain.lx, domain.ly)?;
        Ok(Self {
            domain,
            n,
            m,
            h1: domain.lx / (n - 1) as f64,
            h2: domain.ly / (m - 1) as f64,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.m
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        // last node lands exactly on the right edge
        if i + 1 == self.n {
            self.domain.x0 + self.domain.lx
        } else {
            self.domain.x0 + i as f64 * self.h1
        }
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        if j + 1 == self.m {
            self.domain.y0 + self.domain.ly
        } else {
            self.domain.y0 + j as f64 * self.h2
        }
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x(i), self.y(j))
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i + 1 == self.n || j + 1 == self.m
    }

    /// Node closest to `p` (ties resolved towards the lower index).
    pub fn nearest_node(&self, p: (f64, f64)) -> (usize, usize) {
        let fi = ((p.0 - self.domain.x0) / self.h1).round();
        let fj = ((p.1 - self.domain.y0) / self.h2).round();
        let i = fi.clamp(0.0, (self.n - 1) as f64) as usize;
        let j = fj.clamp(0.0, (self.m - 1) as f64) as usize;
        (i, j)
    }

    pub fn interior_count(&self) -> usize {
        (self.n - 2) * (self.m - 2)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} on {:?} vs {}x{} on {:?}",
                self.n, self.m, self.domain, other.n, other.m, other.domain
            )))
        }
    }
}

/// Real values sampled at every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        Self {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.n,
                grid.m,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.m {
            for i in 0..grid.n {
                let (x, y) = grid.node(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i + self.grid.n * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.grid.n;
        self.values[i + n * j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest absolute value on the outermost node ring.
    pub fn boundary_max_abs(&self) -> f64 {
        let (n, m) = (self.grid.n, self.grid.m);
        let mut mx = 0.0f64;
        for i in 0..n {
            mx = mx.max(self.get(i, 0).abs()).max(self.get(i, m - 1).abs());
        }
        for j in 0..m {
            mx = mx.max(self.get(0, j).abs()).max(self.get(n - 1, j).abs());
        }
        mx
    }

    pub fn zero_boundary(&mut self) {
        let (n, m) = (self.grid.n, self.grid.m);
        for i in 0..n {
            self.set(i, 0, 0.0);
            self.set(i, m - 1, 0.0);
        }
        for j in 0..m {
            self.set(0, j, 0.0);
            self.set(n - 1, j, 0.0);
        }
    }

    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Field) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    /// Node index of the largest value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best % self.grid.n, best / self.grid.n)
    }
}

/// Mesh-weighted discrete L2 distance `sqrt(h1 h2 sum (a - b)^2)`.
pub fn l2_error(a: &Field, b: &Field) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    let ss: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((a.grid.h1 * a.grid.h2 * ss).sqrt())
}

/// Mesh-weighted L2 norm of a field.
pub fn l2_norm(a: &Field) -> f64 {
    let ss: f64 = a.values.iter().map(|x| x * x).sum();
    (a.grid.h1 * a.grid.h2 * ss).sqrt()
}
