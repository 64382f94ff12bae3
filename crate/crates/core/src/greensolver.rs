//! Boundary value problems solved through the discrete Green's
//! representation `u(xi) = sum w f G(., xi) - sum w_b g a dG/dn`, with
//! Simpson quadrature and a pluggable Green's-function provider.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{l2_error, Field, Grid};
use crate::model::UNet;
use crate::operator::{CoefficientSpec, DirectSolver, JacobiMode, StencilCoeffs, DEFAULT_JACOBI_TOL, DIRECT_SOLVE_MAX_UNKNOWNS};
use crate::scalar::Scalar;
use crate::source::{build_input, gaussian_source, InputVariant, SourceConfig};

/// Width of the reference provider's Gaussian in units of `max(h1, h2)`.
/// Narrower than the training default: the representation formula wants a
/// point source, and below about half a cell the Gaussian is under-resolved.
pub const REFERENCE_SIGMA_FACTOR: f64 = 0.5;

/// Composite Simpson weights on `count` equispaced nodes. An odd number of
/// intervals ends with a Simpson 3/8 block over the last three.
pub fn simpson_weights_1d(count: usize, h: f64) -> Result<Vec<f64>> {
    if count < 3 {
        return Err(Error::Quadrature(format!("need at least 3 nodes, got {count}")));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Quadrature(format!("invalid spacing {h}")));
    }
    let intervals = count - 1;
    let mut w = vec![0.0; count];
    let simpson_end = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    for s in (0..simpson_end).step_by(2) {
        w[s] += h / 3.0;
        w[s + 1] += 4.0 * h / 3.0;
        w[s + 2] += h / 3.0;
    }
    if intervals % 2 == 1 {
        let s = simpson_end;
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    /// `j = 0`, normal `-y`.
    Bottom,
    /// `j = m - 1`, normal `+y`.
    Top,
    /// `i = 0`, normal `-x`.
    Left,
    /// `i = n - 1`, normal `+x`.
    Right,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Bottom, Edge::Top, Edge::Left, Edge::Right];

    /// Nodes along the edge in increasing coordinate order, corners included.
    pub fn nodes(self, grid: &Grid) -> Vec<(usize, usize)> {
        let (n, m) = (grid.n, grid.m);
        match self {
            Edge::Bottom => (0..n).map(|i| (i, 0)).collect(),
            Edge::Top => (0..n).map(|i| (i, m - 1)).collect(),
            Edge::Left => (0..m).map(|j| (0, j)).collect(),
            Edge::Right => (0..m).map(|j| (n - 1, j)).collect(),
        }
    }

    /// Whether this edge owns the corner nodes in the boundary sum.
    pub fn owns_corners(self) -> bool {
        matches!(self, Edge::Bottom | Edge::Top)
    }
}

impl std::str::FromStr for Edge {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bottom" => Ok(Edge::Bottom),
            "top" => Ok(Edge::Top),
            "left" => Ok(Edge::Left),
            "right" => Ok(Edge::Right),
            _ => Err(Error::Quadrature(format!("unknown edge '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    grid: Grid,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    /// Tensor-product volume weights, row-major like fields.
    pub volume: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(grid: &Grid) -> Result<Self> {
        let wx = simpson_weights_1d(grid.n, grid.h1)?;
        let wy = simpson_weights_1d(grid.m, grid.h2)?;
        let mut volume = Vec::with_capacity(grid.len());
        for wj in &wy {
            for wi in &wx {
                volume.push(wi * wj);
            }
        }
        Ok(Self {
            grid: *grid,
            wx,
            wy,
            volume,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Weights along an edge, corners included; they sum to its length.
    pub fn edge_weights(&self, edge: Edge) -> &[f64] {
        match edge {
            Edge::Bottom | Edge::Top => &self.wx,
            Edge::Left | Edge::Right => &self.wy,
        }
    }

    pub fn integrate(&self, f: &Field) -> Result<f64> {
        self.grid.check_same(f.grid())?;
        Ok(self.volume.iter().zip(f.values()).map(|(w, v)| w * v).sum())
    }
}

/// `a dG/dn` at every node of `edge` (outward normal), from the one-sided
/// difference against the zero boundary ring.
pub fn boundary_normal_flux(g: &Field, coeffs: &CoefficientSpec, edge: Edge) -> Result<Vec<f64>> {
    let grid = g.grid();
    let bmax = g.boundary_max_abs();
    if bmax != 0.0 {
        return Err(Error::NonZeroBoundary(bmax));
    }
    let (n, m) = (grid.n, grid.m);
    let out = edge
        .nodes(grid)
        .into_iter()
        .map(|(i, j)| {
            let (x, y) = grid.node(i, j);
            let (inner, h) = match edge {
                Edge::Bottom => (g.get(i, 1), grid.h2),
                Edge::Top => (g.get(i, m - 2), grid.h2),
                Edge::Left => (g.get(1, j), grid.h1),
                Edge::Right => (g.get(n - 2, j), grid.h1),
            };
            coeffs.a(x, y) * (0.0 - inner) / h
        })
        .collect();
    Ok(out)
}

/// `sum_b w_b s(x_b) a dG/dn` over the partitioned boundary.
pub fn boundary_sum(g: &Field, coeffs: &CoefficientSpec, quad: &QuadratureRule, s: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let grid = g.grid();
    let mut total = 0.0;
    for edge in Edge::ALL {
        let flux = boundary_normal_flux(g, coeffs, edge)?;
        let w = quad.edge_weights(edge);
        let nodes = edge.nodes(grid);
        let last = nodes.len() - 1;
        for (k, (i, j)) in nodes.into_iter().enumerate() {
            if !edge.owns_corners() && (k == 0 || k == last) {
                continue;
            }
            let (x, y) = grid.node(i, j);
            total += w[k] * s(x, y) * flux[k];
        }
    }
    Ok(total)
}

/// Supplies `G(., xi)` for a source at grid node `xi`.
pub trait GreenProvider: Sync {
    fn grid(&self) -> &Grid;
    fn coeffs(&self) -> &CoefficientSpec;
    fn green(&self, node: (usize, usize)) -> Result<Field>;
    fn describe(&self) -> String;
}

enum RefMethod {
    Direct(DirectSolver),
    Jacobi { tol: f64, max_iter: usize },
}

/// Finite-difference Green's functions of a narrow Gaussian source.
pub struct ReferenceProvider {
    stencil: StencilCoeffs,
    sigma: f64,
    method: RefMethod,
}

impl ReferenceProvider {
    /// Direct solve when the grid is small enough, otherwise Jacobi to the
    /// default tolerance.
    pub fn new(stencil: StencilCoeffs, sigma_factor: f64) -> Result<Self> {
        let g = stencil.grid();
        if g.interior_count() <= DIRECT_SOLVE_MAX_UNKNOWNS {
            Self::direct(stencil, sigma_factor)
        } else {
            Self::jacobi(stencil, sigma_factor, DEFAULT_JACOBI_TOL, 5_000_000)
        }
    }

    pub fn direct(stencil: StencilCoeffs, sigma_factor: f64) -> Result<Self> {
        let sigma = Self::sigma_for(stencil.grid(), sigma_factor)?;
        let method = RefMethod::Direct(stencil.factor()?);
        Ok(Self { stencil, sigma, method })
    }

    pub fn jacobi(stencil: StencilCoeffs, sigma_factor: f64, tol: f64, max_iter: usize) -> Result<Self> {
        let sigma = Self::sigma_for(stencil.grid(), sigma_factor)?;
        Ok(Self {
            stencil,
            sigma,
            method: RefMethod::Jacobi { tol, max_iter },
        })
    }

    fn sigma_for(grid: &Grid, factor: f64) -> Result<f64> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidSource(format!("sigma factor must be positive, got {factor}")));
        }
        Ok(factor * grid.h1.max(grid.h2))
    }

    pub fn stencil(&self) -> &StencilCoeffs {
        &self.stencil
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn green_at(&self, xi: (f64, f64)) -> Result<Field> {
        let rho = gaussian_source(self.stencil.grid(), xi, self.sigma)?;
        match &self.method {
            RefMethod::Direct(d) => d.solve(&rho),
            RefMethod::Jacobi { tol, max_iter } => {
                let out = self.stencil.jacobi_solve(
                    &rho,
                    &Field::zeros(*self.stencil.grid()),
                    JacobiMode::ToTolerance {
                        tol: *tol,
                        max_iter: *max_iter,
                    },
                )?;
                if !out.converged {
                    return Err(Error::SolveGuard(format!(
                        "Jacobi stalled at residual {:e} after {} sweeps",
                        out.residual_norm, out.iterations
                    )));
                }
                Ok(out.field)
            }
        }
    }
}

impl GreenProvider for ReferenceProvider {
    fn grid(&self) -> &Grid {
        self.stencil.grid()
    }

    fn coeffs(&self) -> &CoefficientSpec {
        self.stencil.coefficients()
    }

    fn green(&self, (i, j): (usize, usize)) -> Result<Field> {
        self.green_at(self.stencil.grid().node(i, j))
    }

    fn describe(&self) -> String {
        let m = match self.method {
            RefMethod::Direct(_) => "direct".to_string(),
            RefMethod::Jacobi { tol, .. } => format!("jacobi tol={tol:e}"),
        };
        format!("reference ({m}, sigma={:.4e})", self.sigma)
    }
}

/// A trained network queried with the source input it was trained on.
pub struct LearnedProvider<T> {
    net: UNet<T>,
    grid: Grid,
    coeffs: CoefficientSpec,
    variant: InputVariant,
    source: SourceConfig,
}

impl<T: Scalar> LearnedProvider<T> {
    pub fn new(net: UNet<T>, grid: Grid, coeffs: CoefficientSpec, variant: InputVariant, source: SourceConfig) -> Result<Self> {
        if !net.grid_matches(&grid) {
            return Err(Error::ConfigMismatch("network resolution differs from the grid".into()));
        }
        if net.config().in_channels != variant.channels() {
            return Err(Error::ConfigMismatch(format!(
                "network takes {} input channels, variant provides {}",
                net.config().in_channels,
                variant.channels()
            )));
        }
        source.validate()?;
        Ok(Self {
            net,
            grid,
            coeffs,
            variant,
            source,
        })
    }

    pub fn net(&self) -> &UNet<T> {
        &self.net
    }

    pub fn green_at(&self, xi: (f64, f64)) -> Result<Field> {
        let input = build_input(&self.grid, xi, self.variant, &self.source)?;
        self.net.forward(&input)
    }
}

impl<T: Scalar> GreenProvider for LearnedProvider<T> {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn coeffs(&self) -> &CoefficientSpec {
        &self.coeffs
    }

    fn green(&self, (i, j): (usize, usize)) -> Result<Field> {
        self.green_at(self.grid.node(i, j))
    }

    fn describe(&self) -> String {
        format!("learned ({} parameters, {})", self.net.param_count(), T::DTYPE)
    }
}

pub type PointFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `L u = f` in the domain, `u = g` on its boundary.
#[derive(Clone)]
pub struct Bvp {
    pub name: String,
    pub coeffs: CoefficientSpec,
    pub f: PointFn,
    pub g: PointFn,
    pub exact: Option<PointFn>,
}

impl fmt::Debug for Bvp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bvp")
            .field("name", &self.name)
            .field("coeffs", &self.coeffs)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl Bvp {
    /// Data given as expressions in `x1`, `x2`.
    pub fn from_exprs(coeffs: CoefficientSpec, f: &str, g: &str) -> Result<Self> {
        let fe = Expr::parse(f)?;
        let ge = Expr::parse(g)?;
        Ok(Self {
            name: format!("f={fe}, g={ge}"),
            coeffs,
            f: Arc::new(move |x, y| fe.eval(x, y)),
            g: Arc::new(move |x, y| ge.eval(x, y)),
            exact: None,
        })
    }

    /// Registered analytic cases: `poisson-sin(L)` (also `poisson-sinL`),
    /// `poisson-cos`, `rd1-gauss`.
    pub fn named(name: &str) -> Result<Self> {
        let name = name.trim();
        if let Some(rest) = name.strip_prefix("poisson-sin") {
            let lam: f64 = rest
                .trim_start_matches('(')
                .trim_end_matches(')')
                .parse()
                .map_err(|_| Error::UnknownCase(name.to_string()))?;
            if !(lam.is_finite() && lam > 0.0) {
                return Err(Error::UnknownCase(name.to_string()));
            }
            let w = 2.0 * lam * std::f64::consts::PI;
            let u = move |x: f64, y: f64| (w * x).sin() * (w * y).sin();
            return Ok(Self {
                name: format!("poisson-sin({lam})"),
                coeffs: CoefficientSpec::Laplace,
                f: Arc::new(move |x, y| 2.0 * w * w * u(x, y)),
                g: Arc::new(u),
                exact: Some(Arc::new(u)),
            });
        }
        match name {
            "poisson-cos" => {
                let pi = std::f64::consts::PI;
                let u = move |x: f64, y: f64| (pi * x).cos() * (pi * y).cos();
                Ok(Self {
                    name: name.to_string(),
                    coeffs: CoefficientSpec::Laplace,
                    f: Arc::new(move |x, y| 2.0 * pi * pi * u(x, y)),
                    g: Arc::new(u),
                    exact: Some(Arc::new(u)),
                })
            }
            "rd1-gauss" => {
                let ln10 = std::f64::consts::LN_10;
                let u = |x: f64, y: f64| 10f64.powf(-(x * x + 2.0 * y * y + 1.0));
                // a = 1 + 2y^2, r = 1 + x^2, so L u = -(a (uxx + uyy) + a_y uy) + r u
                let f = move |x: f64, y: f64| {
                    let v = u(x, y);
                    let uy = -4.0 * y * ln10 * v;
                    let uxx = (-2.0 * ln10 + (2.0 * x * ln10).powi(2)) * v;
                    let uyy = (-4.0 * ln10 + (4.0 * y * ln10).powi(2)) * v;
                    let a = 1.0 + 2.0 * y * y;
                    -(a * (uxx + uyy) + 4.0 * y * uy) + (1.0 + x * x) * v
                };
                Ok(Self {
                    name: name.to_string(),
                    coeffs: CoefficientSpec::Rd1,
                    f: Arc::new(f),
                    g: Arc::new(u),
                    exact: Some(Arc::new(u)),
                })
            }
            _ => Err(Error::UnknownCase(name.to_string())),
        }
    }

    pub fn case_names() -> &'static [&'static str] {
        &["poisson-sin(<lambda>)", "poisson-cos", "rd1-gauss"]
    }
}

/// Representation-formula solution on the provider's grid; boundary nodes
/// take `g` exactly.
pub fn solve_bvp(provider: &dyn GreenProvider, bvp: &Bvp, grid: &Grid) -> Result<Field> {
    provider.grid().check_same(grid)?;
    if provider.coeffs() != &bvp.coeffs {
        return Err(Error::ConfigMismatch(format!(
            "problem uses coefficients {} but the provider was built for {}",
            bvp.coeffs,
            provider.coeffs()
        )));
    }
    let quad = QuadratureRule::new(grid)?;
    let fw: Vec<f64> = (0..grid.len())
        .map(|p| {
            let (i, j) = (p % grid.n, p / grid.n);
            let (x, y) = grid.node(i, j);
            quad.volume[p] * (bvp.f)(x, y)
        })
        .collect();
    let homogeneous = all_boundary_zero(grid, &*bvp.g);
    let nodes: Vec<(usize, usize)> = (1..grid.m - 1)
        .flat_map(|j| (1..grid.n - 1).map(move |i| (i, j)))
        .collect();
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|&node| {
            let g = provider.green(node)?;
            let vol: f64 = fw.iter().zip(g.values()).map(|(a, b)| a * b).sum();
            let bnd = if homogeneous {
                0.0
            } else {
                boundary_sum(&g, &bvp.coeffs, &quad, &*bvp.g)?
            };
            Ok(vol - bnd)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut u = Field::from_fn(*grid, |x, y| (bvp.g)(x, y));
    for (&(i, j), v) in nodes.iter().zip(vals) {
        u.set(i, j, v);
    }
    Ok(u)
}

fn all_boundary_zero(grid: &Grid, g: &(dyn Fn(f64, f64) -> f64 + Send + Sync)) -> bool {
    Edge::ALL.iter().all(|e| {
        e.nodes(grid).into_iter().all(|(i, j)| {
            let (x, y) = grid.node(i, j);
            g(x, y) == 0.0
        })
    })
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub u: Field,
    pub exact: Field,
    pub e2: f64,
}

pub fn evaluate_case(provider: &dyn GreenProvider, case: &str, grid: &Grid) -> Result<CaseReport> {
    let bvp = Bvp::named(case)?;
    evaluate_bvp(provider, &bvp, grid)
}

pub fn evaluate_bvp(provider: &dyn GreenProvider, bvp: &Bvp, grid: &Grid) -> Result<CaseReport> {
    let exact_fn = bvp
        .exact
        .clone()
        .ok_or_else(|| Error::UnknownCase(format!("{} has no exact solution", bvp.name)))?;
    let u = solve_bvp(provider, bvp, grid)?;
    let exact = Field::from_fn(*grid, |x, y| exact_fn(x, y));
    let e2 = l2_error(&u, &exact)?;
    Ok(CaseReport { u, exact, e2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RectDomain;

    fn grid(n: usize) -> Grid {
        Grid::new(RectDomain::unit_square_sym(), n, n).unwrap()
    }

    #[test]
    fn simpson_cubic_exact() {
        let w = simpson_weights_1d(5, 0.25).unwrap();
        let s: f64 = w.iter().enumerate().map(|(k, w)| w * (0.25 * k as f64).powi(3)).sum();
        assert!((s - 0.25).abs() < 1e-15);
        let h = 2.0 / 63.0;
        let w = simpson_weights_1d(64, h).unwrap();
        let s: f64 = w.iter().enumerate().map(|(k, w)| w * (-1.0 + h * k as f64).powi(3)).sum();
        assert!(s.abs() < 1e-12);
        let s: f64 = w.iter().enumerate().map(|(k, w)| w * (-1.0 + h * k as f64).powi(2)).sum();
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_partition() {
        for count in 3..=66 {
            let h = 0.37;
            let s: f64 = simpson_weights_1d(count, h).unwrap().iter().sum();
            let len = (count - 1) as f64 * h;
            assert!((s - len).abs() <= 1e-13 * len, "count {count}");
        }
        assert!(simpson_weights_1d(2, 1.0).is_err());
    }

    #[test]
    fn volume_weights_partition_area() {
        let g = Grid::new(RectDomain::new(0.0, 0.0, 3.0, 1.5).unwrap(), 10, 7).unwrap();
        let q = QuadratureRule::new(&g).unwrap();
        let s: f64 = q.volume.iter().sum();
        assert!((s - 4.5).abs() < 1e-13 * 4.5);
        for e in Edge::ALL {
            let len = if matches!(e, Edge::Bottom | Edge::Top) { 3.0 } else { 1.5 };
            let s: f64 = q.edge_weights(e).iter().sum();
            assert!((s - len).abs() < 1e-13);
        }
    }

    #[test]
    fn flux_formula() {
        let g = grid(6);
        assert!(boundary_normal_flux(&Field::zeros(g), &CoefficientSpec::Laplace, Edge::Left)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let mut f = Field::zeros(g);
        for j in 1..5 {
            f.set(1, j, 2.5);
        }
        let fl = boundary_normal_flux(&f, &CoefficientSpec::Laplace, Edge::Left).unwrap();
        assert!((fl[2] + 2.5 / g.h1).abs() < 1e-12);
        let mut bad = Field::zeros(g);
        bad.set(0, 0, 1.0);
        assert!(boundary_normal_flux(&bad, &CoefficientSpec::Laplace, Edge::Top).is_err());
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = grid(9);
        let st = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let p = ReferenceProvider::new(st, REFERENCE_SIGMA_FACTOR).unwrap();
        let bvp = Bvp::from_exprs(CoefficientSpec::Laplace, "0", "0").unwrap();
        let u = solve_bvp(&p, &bvp, &g).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn linear_in_f() {
        let g = grid(11);
        let st = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let p = ReferenceProvider::new(st, REFERENCE_SIGMA_FACTOR).unwrap();
        let solve = |f: &str| solve_bvp(&p, &Bvp::from_exprs(CoefficientSpec::Laplace, f, "0").unwrap(), &g).unwrap();
        let a = solve("x1^2 + sin(x2)");
        let b = solve("exp(x1*x2)");
        let c = solve("x1^2 + sin(x2) + exp(x1*x2)");
        let sum = a.axpy(1.0, &b).unwrap();
        assert!(sum.max_abs_diff(&c).unwrap() < 1e-10);
    }

    #[test]
    fn coefficient_mismatch_refused() {
        let g = grid(9);
        let st = StencilCoeffs::assemble(&g, &CoefficientSpec::Laplace).unwrap();
        let p = ReferenceProvider::new(st, REFERENCE_SIGMA_FACTOR).unwrap();
        let bvp = Bvp::named("rd1-gauss").unwrap();
        assert!(matches!(solve_bvp(&p, &bvp, &g), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn case_registry() {
        for n in ["poisson-sin(2)", "poisson-sin2", "poisson-sin(0.5)", "poisson-cos", "rd1-gauss"] {
            Bvp::named(n).unwrap();
        }
        for n in ["poisson-sin", "poisson-sin(x)", "heat", "poisson-sin(-1)"] {
            assert!(matches!(Bvp::named(n), Err(Error::UnknownCase(_))), "{n}");
        }
        // poisson-sin has homogeneous boundary data on [-1,1]^2 up to rounding
        let b = Bvp::named("poisson-sin(2)").unwrap();
        assert!((b.g)(1.0, 0.3).abs() < 1e-14);
    }

    #[test]
    fn rd1_source_matches_finite_differences() {
        let b = Bvp::named("rd1-gauss").unwrap();
        let u = b.exact.clone().unwrap();
        let c = CoefficientSpec::Rd1;
        let h = 1e-4;
        for &(x, y) in &[(0.1, -0.3), (0.7, 0.4), (-0.5, 0.9)] {
            let flux_x = |x: f64, y: f64| c.a(x, y) * (u(x + h / 2.0, y) - u(x - h / 2.0, y)) / h;
            let flux_y = |x: f64, y: f64| c.a(x, y) * (u(x, y + h / 2.0) - u(x, y - h / 2.0)) / h;
            let div = (flux_x(x + h / 2.0, y) - flux_x(x - h / 2.0, y)) / h + (flux_y(x, y + h / 2.0) - flux_y(x, y - h / 2.0)) / h;
            let lu = -div + c.r(x, y) * u(x, y);
            assert!((lu - (b.f)(x, y)).abs() < 1e-5, "{lu} vs {}", (b.f)(x, y));
        }
    }
}
