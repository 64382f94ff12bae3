//! Five-point finite-difference discretization of
//! `L u = -div(a grad u) + r u` with homogeneous Dirichlet boundary nodes,
//! together with Jacobi iteration and a banded Cholesky direct solver.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Field, Grid};

/// Diffusion coefficient `a > 0` and reaction coefficient `r >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoeffRepr", into = "CoeffRepr")]
pub enum CoefficientSpec {
    /// `a = 1`, `r = 0`.
    Laplace,
    /// `a = 1 + 2 x2^2`, `r = 1 + x1^2`.
    Rd1,
    Custom { a: Expr, r: Expr },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CoeffRepr {
    Name(String),
    Exprs { a: String, r: String },
}

impl TryFrom<CoeffRepr> for CoefficientSpec {
    type Error = Error;
    fn try_from(r: CoeffRepr) -> Result<Self> {
        match r {
            CoeffRepr::Name(n) => CoefficientSpec::by_name(&n),
            CoeffRepr::Exprs { a, r } => CoefficientSpec::custom(&a, &r),
        }
    }
}

impl From<CoefficientSpec> for CoeffRepr {
    fn from(c: CoefficientSpec) -> Self {
        match c {
            CoefficientSpec::Laplace => CoeffRepr::Name("laplace".into()),
            CoefficientSpec::Rd1 => CoeffRepr::Name("rd1".into()),
            CoefficientSpec::Custom { a, r } => CoeffRepr::Exprs {
                a: a.source().to_string(),
                r: r.source().to_string(),
            },
        }
    }
}

impl CoefficientSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "laplace" => Ok(Self::Laplace),
            "rd1" => Ok(Self::Rd1),
            other => Err(Error::InvalidCoefficient(format!(
                "unknown coefficient set '{other}' (expected laplace or rd1)"
            ))),
        }
    }

    pub fn custom(a: &str, r: &str) -> Result<Self> {
        Ok(Self::Custom {
            a: Expr::parse(a)?,
            r: Expr::parse(r)?,
        })
    }

    #[inline]
    pub fn a(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Laplace => 1.0,
            Self::Rd1 => 1.0 + 2.0 * y * y,
            Self::Custom { a, .. } => a.eval(x, y),
        }
    }

    #[inline]
    pub fn r(&self, x: f64, y: f64) -> f64 {
        match self {
            Self::Laplace => 0.0,
            Self::Rd1 => 1.0 + x * x,
            Self::Custom { r, .. } => r.eval(x, y),
        }
    }
}

impl fmt::Display for CoefficientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Laplace => f.write_str("laplace"),
            Self::Rd1 => f.write_str("rd1"),
            Self::Custom { a, r } => write!(f, "custom(a={a}, r={r})"),
        }
    }
}

/// Per-interior-node stencil weights. Arrays are `(n-2) x (m-2)` with the
/// interior x index fastest.
#[derive(Debug, Clone)]
pub struct StencilCoeffs {
    grid: Grid,
    coeffs: CoefficientSpec,
    pub east: Vec<f64>,
    pub west: Vec<f64>,
    pub north: Vec<f64>,
    pub south: Vec<f64>,
    pub center: Vec<f64>,
    pub reaction: Vec<f64>,
    inv_diag: Vec<f64>,
}

/// Stopping rule for [`StencilCoeffs::jacobi_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobiMode {
    FixedK(usize),
    ToTolerance { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone)]
pub struct JacobiOutcome {
    pub field: Field,
    pub iterations: usize,
    /// Mesh-weighted interior residual norm of `field`.
    pub residual_norm: f64,
    /// Always true for `FixedK`; false when `ToTolerance` hit `max_iter`.
    pub converged: bool,
}

/// Default tolerance for "converged" Jacobi references.
pub const DEFAULT_JACOBI_TOL: f64 = 1e-10;

/// Largest interior system [`StencilCoeffs::direct_solve`] will factor.
pub const DIRECT_SOLVE_MAX_UNKNOWNS: usize = 20_000;

impl StencilCoeffs {
    pub fn assemble(grid: &Grid, coeffs: &CoefficientSpec) -> Result<Self> {
        let (ni, mi) = (grid.n - 2, grid.m - 2);
        let len = ni * mi;
        let (h1s, h2s) = (grid.h1 * grid.h1, grid.h2 * grid.h2);
        let mut s = Self {
            grid: *grid,
            coeffs: coeffs.clone(),
            east: Vec::with_capacity(len),
            west: Vec::with_capacity(len),
            north: Vec::with_capacity(len),
            south: Vec::with_capacity(len),
            center: Vec::with_capacity(len),
            reaction: Vec::with_capacity(len),
            inv_diag: Vec::with_capacity(len),
        };
        let check_a = |v: f64, x: f64, y: f64| -> Result<f64> {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::InvalidCoefficient(format!(
                    "diffusion coefficient a({x}, {y}) = {v} must be positive"
                )))
            }
        };
        for j in 1..grid.m - 1 {
            for i in 1..grid.n - 1 {
                let (x, y) = grid.node(i, j);
                // edge midpoints, computed from the neighbouring node
                // coordinates so that shared edges evaluate identically
                let xe = 0.5 * (grid.x(i) + grid.x(i + 1));
                let xw = 0.5 * (grid.x(i - 1) + grid.x(i));
                let yn = 0.5 * (grid.y(j) + grid.y(j + 1));
                let ys = 0.5 * (grid.y(j - 1) + grid.y(j));
                let ce = check_a(coeffs.a(xe, y), xe, y)? / h1s;
                let cw = check_a(coeffs.a(xw, y), xw, y)? / h1s;
                let cn = check_a(coeffs.a(x, yn), x, yn)? / h2s;
                let cs = check_a(coeffs.a(x, ys), x, ys)? / h2s;
                let r = coeffs.r(x, y);
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Error::InvalidCoefficient(format!(
                        "reaction coefficient r({x}, {y}) = {r} must be nonnegative"
                    )));
                }
                let cc = ce + cw + cn + cs;
                s.east.push(ce);
                s.west.push(cw);
                s.north.push(cn);
                s.south.push(cs);
                s.center.push(cc);
                s.reaction.push(r);
                s.inv_diag.push(1.0 / (cc + r));
            }
        }
        Ok(s)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientSpec {
        &self.coeffs
    }

    /// Interior index of grid node `(i, j)`, both in `1..=n-2`.
    #[inline]
    pub fn interior_idx(&self, i: usize, j: usize) -> usize {
        (i - 1) + (self.grid.n - 2) * (j - 1)
    }

    /// `L_h G` on interior nodes; boundary nodes copy `G` (identity rows).
    pub fn apply(&self, g: &Field) -> Result<Field> {
        self.grid.check_same(g.grid())?;
        let n = self.grid.n;
        let gv = g.values();
        let mut out = g.clone();
        let ov = out.values_mut();
        for j in 1..self.grid.m - 1 {
            for i in 1..n - 1 {
                let p = self.interior_idx(i, j);
                let k = i + n * j;
                ov[k] = (self.center[p] + self.reaction[p]) * gv[k]
                    - self.east[p] * gv[k + 1]
                    - self.west[p] * gv[k - 1]
                    - self.north[p] * gv[k + n]
                    - self.south[p] * gv[k - n];
            }
        }
        Ok(out)
    }

    /// Interior residual `L_h G - rho` as a field with a zero boundary ring.
    pub fn residual(&self, g: &Field, rho: &Field) -> Result<Field> {
        self.grid.check_same(rho.grid())?;
        let mut r = self.apply(g)?;
        for (rv, pv) in r.values_mut().iter_mut().zip(rho.values()) {
            *rv -= pv;
        }
        r.zero_boundary();
        Ok(r)
    }

    /// Mesh-weighted L2 norm of the interior residual.
    pub fn residual_norm(&self, g: &Field, rho: &Field) -> Result<f64> {
        Ok(crate::grid::l2_norm(&self.residual(g, rho)?))
    }

    fn check_boundary_zero(&self, g: &Field) -> Result<()> {
        let b = g.boundary_max_abs();
        if b != 0.0 {
            return Err(Error::NonZeroBoundary(b));
        }
        Ok(())
    }

    /// One Jacobi sweep; `out` receives the new iterate (boundary zero).
    fn sweep_into(&self, g: &[f64], rho: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        let m = self.grid.m;
        for j in 1..m - 1 {
            let row = n * j;
            let prow = (n - 2) * (j - 1);
            for i in 1..n - 1 {
                let p = prow + i - 1;
                let k = row + i;
                out[k] = (rho[k]
                    + self.east[p] * g[k + 1]
                    + self.west[p] * g[k - 1]
                    + self.north[p] * g[k + n]
                    + self.south[p] * g[k - n])
                    * self.inv_diag[p];
            }
        }
    }

    pub fn jacobi_step(&self, g: &Field, rho: &Field) -> Result<Field> {
        self.grid.check_same(g.grid())?;
        self.grid.check_same(rho.grid())?;
        self.check_boundary_zero(g)?;
        let mut out = Field::zeros(self.grid);
        self.sweep_into(g.values(), rho.values(), out.values_mut());
        Ok(out)
    }

    /// Exactly `k` Jacobi sweeps starting from `g0`, without residual
    /// bookkeeping. Hot path for target generation during training.
    pub fn jacobi_k(&self, g0: &Field, rho: &Field, k: usize) -> Result<Field> {
        self.grid.check_same(g0.grid())?;
        self.grid.check_same(rho.grid())?;
        self.check_boundary_zero(g0)?;
        let mut cur = g0.clone();
        let mut next = Field::zeros(self.grid);
        for _ in 0..k {
            self.sweep_into(cur.values(), rho.values(), next.values_mut());
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn jacobi_solve(&self, rho: &Field, g0: &Field, mode: JacobiMode) -> Result<JacobiOutcome> {
        match mode {
            JacobiMode::FixedK(k) => {
                let field = self.jacobi_k(g0, rho, k)?;
                let residual_norm = self.residual_norm(&field, rho)?;
                Ok(JacobiOutcome {
                    field,
                    iterations: k,
                    residual_norm,
                    converged: true,
                })
            }
            JacobiMode::ToTolerance { tol, max_iter } => {
                if !(tol > 0.0) {
                    return Err(Error::InvalidCoefficient(format!(
                        "Jacobi tolerance must be positive, got {tol}"
                    )));
                }
                self.grid.check_same(g0.grid())?;
                self.grid.check_same(rho.grid())?;
                self.check_boundary_zero(g0)?;
                let mut cur = g0.clone();
                let mut next = Field::zeros(self.grid);
                let w = self.grid.h1 * self.grid.h2;
                let mut it = 0;
                loop {
                    let rn = (w * self.residual_sq_sum(cur.values(), rho.values())).sqrt();
                    if rn <= tol || it == max_iter {
                        return Ok(JacobiOutcome {
                            field: cur,
                            iterations: it,
                            residual_norm: rn,
                            converged: rn <= tol,
                        });
                    }
                    self.sweep_into(cur.values(), rho.values(), next.values_mut());
                    std::mem::swap(&mut cur, &mut next);
                    it += 1;
                }
            }
        }
    }

    fn residual_sq_sum(&self, g: &[f64], rho: &[f64]) -> f64 {
        let n = self.grid.n;
        let mut acc = 0.0;
        for j in 1..self.grid.m - 1 {
            for i in 1..n - 1 {
                let p = self.interior_idx(i, j);
                let k = i + n * j;
                let r = (self.center[p] + self.reaction[p]) * g[k]
                    - self.east[p] * g[k + 1]
                    - self.west[p] * g[k - 1]
                    - self.north[p] * g[k + n]
                    - self.south[p] * g[k - n]
                    - rho[k];
                acc += r * r;
            }
        }
        acc
    }

    /// Factors the interior matrix for repeated direct solves.
    pub fn factor(&self) -> Result<DirectSolver> {
        DirectSolver::new(self)
    }

    /// Exact solution of the interior system with a zero boundary ring.
    pub fn direct_solve(&self, rho: &Field) -> Result<Field> {
        self.factor()?.solve(rho)
    }
}

/// Banded Cholesky factorization `A = L L^T` of the symmetric positive
/// definite interior matrix, bandwidth `n - 2`.
#[derive(Debug, Clone)]
pub struct DirectSolver {
    grid: Grid,
    unknowns: usize,
    bw: usize,
    /// Row `p` holds `L[p][p-bw ..= p]`.
    band: Vec<f64>,
}

impl DirectSolver {
    fn new(st: &StencilCoeffs) -> Result<Self> {
        let grid = st.grid;
        let (ni, mi) = (grid.n - 2, grid.m - 2);
        let unknowns = ni * mi;
        if unknowns > DIRECT_SOLVE_MAX_UNKNOWNS {
            return Err(Error::SolveGuard(format!(
                "{unknowns} interior unknowns exceeds the limit of {DIRECT_SOLVE_MAX_UNKNOWNS}"
            )));
        }
        let bw = ni;
        let w = bw + 1;
        let mut band = vec![0.0; unknowns * w];
        // lower triangle of A: diagonal, west (p-1), south (p-ni)
        for jj in 0..mi {
            for ii in 0..ni {
                let p = ii + ni * jj;
                band[p * w + bw] = st.center[p] + st.reaction[p];
                if ii > 0 {
                    band[p * w + bw - 1] = -st.west[p];
                }
                if jj > 0 {
                    band[p * w] = -st.south[p];
                }
            }
        }
        for p in 0..unknowns {
            let lo = p.saturating_sub(bw);
            for q in lo..=p {
                let klo = lo.max(q.saturating_sub(bw));
                let mut s = band[p * w + (q + bw - p)];
                for k in klo..q {
                    s -= band[p * w + (k + bw - p)] * band[q * w + (k + bw - q)];
                }
                if q == p {
                    if !(s > 0.0) {
                        return Err(Error::Singular(p));
                    }
                    band[p * w + bw] = s.sqrt();
                } else {
                    band[p * w + (q + bw - p)] = s / band[q * w + bw];
                }
            }
        }
        Ok(Self {
            grid,
            unknowns,
            bw,
            band,
        })
    }

    pub fn solve(&self, rho: &Field) -> Result<Field> {
        self.grid.check_same(rho.grid())?;
        let n = self.grid.n;
        let ni = n - 2;
        let mut x: Vec<f64> = (0..self.unknowns)
            .map(|p| rho.values()[(p % ni + 1) + n * (p / ni + 1)])
            .collect();
        self.solve_in_place(&mut x);
        let mut out = Field::zeros(self.grid);
        let ov = out.values_mut();
        for (p, v) in x.into_iter().enumerate() {
            ov[(p % ni + 1) + n * (p / ni + 1)] = v;
        }
        Ok(out)
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let (bw, w) = (self.bw, self.bw + 1);
        // L y = b
        for p in 0..self.unknowns {
            let lo = p.saturating_sub(bw);
            let mut s = x[p];
            for k in lo..p {
                s -= self.band[p * w + (k + bw - p)] * x[k];
            }
            x[p] = s / self.band[p * w + bw];
        }
        // L^T x = y
        for p in (0..self.unknowns).rev() {
            let xp = x[p] / self.band[p * w + bw];
            x[p] = xp;
            let lo = p.saturating_sub(bw);
            for k in lo..p {
                x[k] -= self.band[p * w + (k + bw - p)] * xp;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RectDomain;

    fn grid(n: usize) -> Grid {
        Grid::new(RectDomain::unit_square_sym(), n, n).unwrap()
    }

    #[test]
    fn laplace_stencil_constants() {
        let g = grid(9);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let inv_h2 = 1.0 / (g.h1 * g.h1);
        for p in 0..g.interior_count() {
            assert!((s.east[p] - inv_h2).abs() < 1e-12);
            assert!((s.north[p] - inv_h2).abs() < 1e-12);
            assert!((s.center[p] - 4.0 * inv_h2).abs() < 1e-10);
            assert_eq!(s.reaction[p], 0.0);
        }
    }

    #[test]
    fn rd1_stencil_at_origin() {
        let g = grid(65);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Rd1).unwrap();
        let p = s.interior_idx(32, 32);
        assert_eq!(g.node(32, 32), (0.0, 0.0));
        let h2 = g.h2;
        let expect = (1.0 + 2.0 * (h2 / 2.0).powi(2)) / (h2 * h2);
        assert!((s.north[p] - expect).abs() < 1e-10 * expect);
        assert_eq!(s.reaction[p], 1.0);
    }

    #[test]
    fn shared_edges_match() {
        let g = Grid::new(RectDomain::new(-0.7, 0.2, 1.3, 0.9).unwrap(), 11, 8).unwrap();
        let c = CoefficientSpec::custom("1 + 0.5*sin(3*x1)*cos(2*x2)", "x1^2").unwrap();
        let s = StencilCoeffs::assemble(&g, &c).unwrap();
        for j in 1..g.m - 1 {
            for i in 1..g.n - 2 {
                assert_eq!(s.east[s.interior_idx(i, j)], s.west[s.interior_idx(i + 1, j)]);
            }
        }
        for j in 1..g.m - 2 {
            for i in 1..g.n - 1 {
                assert_eq!(s.north[s.interior_idx(i, j)], s.south[s.interior_idx(i, j + 1)]);
            }
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        let g = grid(5);
        let neg_a = CoefficientSpec::custom("x1", "0").unwrap();
        assert!(StencilCoeffs::assemble(&g, &neg_a).is_err());
        let neg_r = CoefficientSpec::custom("1", "-1").unwrap();
        assert!(StencilCoeffs::assemble(&g, &neg_r).is_err());
        assert!(CoefficientSpec::by_name("helmholtz").is_err());
    }

    #[test]
    fn linear_functions_are_annihilated() {
        let g = Grid::new(RectDomain::new(0.0, 0.0, 1.0, 1.0).unwrap(), 5, 5).unwrap();
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let u = Field::from_fn(g, |x, _| x);
        let lu = s.apply(&u).unwrap();
        for j in 1..4 {
            for i in 1..4 {
                assert!(lu.get(i, j).abs() < 1e-12);
            }
        }
        // identity rows on the boundary
        assert_eq!(lu.get(4, 2), 1.0);
        assert_eq!(s.apply(&Field::zeros(g)).unwrap(), Field::zeros(g));
    }

    #[test]
    fn single_step_point_source() {
        let g = grid(5);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let mut rho = Field::zeros(g);
        rho.set(2, 2, 1.0);
        let out = s.jacobi_step(&Field::zeros(g), &rho).unwrap();
        let h = g.h1;
        for j in 0..5 {
            for i in 0..5 {
                let expect = if (i, j) == (2, 2) { h * h / 4.0 } else { 0.0 };
                assert!((out.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobi_rejects_nonzero_boundary() {
        let g = grid(5);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let mut g0 = Field::zeros(g);
        g0.set(0, 3, 1e-3);
        assert!(matches!(
            s.jacobi_step(&g0, &Field::zeros(g)),
            Err(Error::NonZeroBoundary(_))
        ));
    }

    #[test]
    fn fixed_zero_returns_initial() {
        let g = grid(7);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Rd1).unwrap();
        let mut g0 = Field::from_fn(g, |x, y| x * y + 0.3);
        g0.zero_boundary();
        let rho = Field::constant(g, 1.0);
        let out = s.jacobi_solve(&rho, &g0, JacobiMode::FixedK(0)).unwrap();
        assert_eq!(out.field, g0);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn tolerance_mode_reports_non_convergence() {
        let g = grid(17);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let rho = Field::constant(g, 1.0);
        let out = s
            .jacobi_solve(&rho, &Field::zeros(g), JacobiMode::ToTolerance { tol: 1e-12, max_iter: 5 })
            .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
        assert!(out.residual_norm > 1e-12);
    }

    #[test]
    fn direct_solve_zero_and_guard() {
        let g = grid(9);
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Rd1).unwrap();
        assert_eq!(s.direct_solve(&Field::zeros(g)).unwrap(), Field::zeros(g));
        let big = grid(150);
        let s = StencilCoeffs::assemble(&big, &CoefficientSpec::Laplace).unwrap();
        assert!(matches!(s.factor(), Err(Error::SolveGuard(_))));
    }

    #[test]
    fn direct_solve_has_small_residual() {
        let g = Grid::new(RectDomain::unit_square_sym(), 13, 9).unwrap();
        let s = StencilCoeffs::assemble(&g, &CoefficientSpec::Rd1).unwrap();
        let rho = Field::from_fn(g, |x, y| (3.0 * x).sin() + y * y);
        let u = s.direct_solve(&rho).unwrap();
        let mut rho_int = rho.clone();
        rho_int.zero_boundary();
        let rel = s.residual_norm(&u, &rho).unwrap() / crate::grid::l2_norm(&rho_int);
        assert!(rel < 1e-10, "relative residual {rel}");
    }

    #[test]
    fn coefficient_serde() {
        let c: CoefficientSpec = serde_json::from_str("\"rd1\"").unwrap();
        assert_eq!(c, CoefficientSpec::Rd1);
        let c: CoefficientSpec = serde_json::from_str(r#"{"a":"1+x1^2","r":"0"}"#).unwrap();
        assert!((c.a(2.0, 0.0) - 5.0).abs() < 1e-15);
        let back = serde_json::to_string(&c).unwrap();
        assert_eq!(back, r#"{"a":"1+x1^2","r":"0"}"#);
        assert!(serde_json::from_str::<CoefficientSpec>("\"nope\"").is_err());
    }
}
