//! Gaussian point sources, network input encodings, and training/validation
//! datasets of random source points.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::io::{read_field, write_field};
use crate::operator::{CoefficientSpec, JacobiMode, StencilCoeffs, DEFAULT_JACOBI_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Gaussian width in units of `max(h1, h2)`.
    pub sigma_factor: f64,
    /// Minimum distance of a sampled source from the boundary, in cells.
    pub margin_cells: usize,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            sigma_factor: 2.0,
            margin_cells: 2,
            seed: 0,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_factor > 0.0 && self.sigma_factor.is_finite()) {
            return Err(Error::InvalidSource(format!(
                "sigma_factor must be positive, got {}",
                self.sigma_factor
            )));
        }
        if self.margin_cells < 1 {
            return Err(Error::InvalidSource("margin_cells must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, grid: &Grid) -> f64 {
        self.sigma_factor * grid.h1.max(grid.h2)
    }
}

/// `rho(x - xi) = exp(-|x - xi|^2 / (2 sigma^2)) / (2 pi sigma^2)` at every node.
pub fn gaussian_source(grid: &Grid, xi: (f64, f64), sigma: f64) -> Result<Field> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSource(format!("sigma must be positive, got {sigma}")));
    }
    if !(xi.0.is_finite() && xi.1.is_finite()) {
        return Err(Error::InvalidSource("source point must be finite".into()));
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Field::from_fn(*grid, |x, y| {
        let d2 = (x - xi.0) * (x - xi.0) + (y - xi.1) * (y - xi.1);
        norm * (-d2 * inv).exp()
    }))
}

/// Distances `|x_ij - xi|`, min-max normalized to `[0, 1]`.
pub fn distance_field(grid: &Grid, xi: (f64, f64)) -> Result<Field> {
    let mut r = Field::from_fn(*grid, |x, y| ((x - xi.0).powi(2) + (y - xi.1).powi(2)).sqrt());
    let (lo, hi) = r
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(hi > lo) {
        return Err(Error::InvalidSource("degenerate distance field".into()));
    }
    let scale = 1.0 / (hi - lo);
    for v in r.values_mut() {
        *v = (*v - lo) * scale;
    }
    Ok(r)
}

/// Which channels the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum InputVariant {
    /// `[rho]`
    Source,
    /// `[R, rho]`
    DistanceSource,
    /// `[X1, X2, rho]`
    CoordsSource,
}

impl InputVariant {
    pub fn channels(self) -> usize {
        match self {
            Self::Source => 1,
            Self::DistanceSource => 2,
            Self::CoordsSource => 3,
        }
    }
}

impl TryFrom<u8> for InputVariant {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Source),
            2 => Ok(Self::DistanceSource),
            3 => Ok(Self::CoordsSource),
            other => Err(Error::InvalidSource(format!(
                "input variant must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

impl From<InputVariant> for u8 {
    fn from(v: InputVariant) -> u8 {
        match v {
            InputVariant::Source => 1,
            InputVariant::DistanceSource => 2,
            InputVariant::CoordsSource => 3,
        }
    }
}

/// Channel-major `C x m x n` input, `i` fastest within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub grid: Grid,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl InputTensor {
    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }
}

pub fn build_input(
    grid: &Grid,
    xi: (f64, f64),
    variant: InputVariant,
    cfg: &SourceConfig,
) -> Result<InputTensor> {
    cfg.validate()?;
    let rho = gaussian_source(grid, xi, cfg.sigma(grid))?;
    Ok(input_from_rho(grid, xi, variant, &rho)?)
}

fn input_from_rho(grid: &Grid, xi: (f64, f64), variant: InputVariant, rho: &Field) -> Result<InputTensor> {
    let mut data = Vec::with_capacity(variant.channels() * grid.len());
    match variant {
        InputVariant::Source => {}
        InputVariant::DistanceSource => data.extend_from_slice(distance_field(grid, xi)?.values()),
        InputVariant::CoordsSource => {
            data.extend_from_slice(Field::from_fn(*grid, |x, _| x).values());
            data.extend_from_slice(Field::from_fn(*grid, |_, y| y).values());
        }
    }
    data.extend_from_slice(rho.values());
    Ok(InputTensor {
        grid: *grid,
        channels: variant.channels(),
        data,
    })
}

/// Rectangle of admissible source points.
pub fn admissible_region(grid: &Grid, cfg: &SourceConfig) -> Result<((f64, f64), (f64, f64))> {
    cfg.validate()?;
    let d = grid.domain;
    let mx = cfg.margin_cells as f64 * grid.h1;
    let my = cfg.margin_cells as f64 * grid.h2;
    let (xlo, xhi) = (d.x0 + mx, d.x0 + d.lx - mx);
    let (ylo, yhi) = (d.y0 + my, d.y0 + d.ly - my);
    if !(xlo < xhi && ylo < yhi) {
        return Err(Error::InvalidSource(format!(
            "margin of {} cells leaves no admissible source points on a {}x{} grid",
            cfg.margin_cells, grid.n, grid.m
        )));
    }
    Ok(((xlo, xhi), (ylo, yhi)))
}

/// Uniform source points on the margin-shrunk rectangle. Sample `k` uses its
/// own RNG stream `start + k` of `cfg.seed`, so any subrange can be
/// regenerated independently.
pub fn sample_sources_from(
    grid: &Grid,
    start: u64,
    count: usize,
    cfg: &SourceConfig,
) -> Result<Vec<(f64, f64)>> {
    if count == 0 {
        return Err(Error::InvalidSource("sample count must be at least 1".into()));
    }
    let ((xlo, xhi), (ylo, yhi)) = admissible_region(grid, cfg)?;
    Ok((0..count as u64)
        .map(|k| {
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
            rng.set_stream(start + k);
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            (xlo + (xhi - xlo) * u, ylo + (yhi - ylo) * v)
        })
        .collect())
}

pub fn sample_sources(grid: &Grid, count: usize, cfg: &SourceConfig) -> Result<Vec<(f64, f64)>> {
    sample_sources_from(grid, 0, count, cfg)
}

const VAL_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSample {
    pub xi: (f64, f64),
    pub rho: Field,
    pub input: InputTensor,
    /// Converged discrete solution of `L_h G = rho`.
    pub reference: Option<Field>,
}

impl SourceSample {
    pub fn new(grid: &Grid, xi: (f64, f64), variant: InputVariant, cfg: &SourceConfig) -> Result<Self> {
        let rho = gaussian_source(grid, xi, cfg.sigma(grid))?;
        let input = input_from_rho(grid, xi, variant, &rho)?;
        Ok(Self {
            xi,
            rho,
            input,
            reference: None,
        })
    }
}

/// How reference fields are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSolver {
    Jacobi { tol: f64, max_iter: usize },
    Direct,
}

impl Default for ReferenceSolver {
    fn default() -> Self {
        Self::Jacobi {
            tol: DEFAULT_JACOBI_TOL,
            max_iter: 5_000_000,
        }
    }
}

impl ReferenceSolver {
    pub fn solve(&self, stencil: &StencilCoeffs, rho: &Field) -> Result<Field> {
        match *self {
            Self::Direct => stencil.direct_solve(rho),
            Self::Jacobi { tol, max_iter } => {
                let out = stencil.jacobi_solve(
                    rho,
                    &Field::zeros(*stencil.grid()),
                    JacobiMode::ToTolerance { tol, max_iter },
                )?;
                if !out.converged {
                    return Err(Error::SolveGuard(format!(
                        "Jacobi did not reach {tol:e} within {max_iter} sweeps (residual {:e})",
                        out.residual_norm
                    )));
                }
                Ok(out.field)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub variant: InputVariant,
    pub source: SourceConfig,
    /// Also compute references for the training set (needed by the
    /// data-driven loss).
    pub train_references: bool,
    pub reference: ReferenceSolver,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 100,
            variant: InputVariant::Source,
            source: SourceConfig::default(),
            train_references: false,
            reference: ReferenceSolver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: Grid,
    pub coeffs: CoefficientSpec,
    pub spec: DatasetSpec,
    pub train: Vec<SourceSample>,
    pub val: Vec<SourceSample>,
}

impl Dataset {
    pub fn generate(stencil: &StencilCoeffs, spec: &DatasetSpec) -> Result<Self> {
        let grid = *stencil.grid();
        if spec.n_val == 0 {
            return Err(Error::InvalidSource("n_val must be at least 1".into()));
        }
        let train_xi = sample_sources_from(&grid, 0, spec.n_train, &spec.source)?;
        let val_xi = sample_sources_from(&grid, VAL_STREAM_OFFSET, spec.n_val, &spec.source)?;
        let build = |xi: (f64, f64), with_ref: bool| -> Result<SourceSample> {
            let mut s = SourceSample::new(&grid, xi, spec.variant, &spec.source)?;
            if with_ref {
                s.reference = Some(spec.reference.solve(stencil, &s.rho)?);
            }
            Ok(s)
        };
        let train = train_xi
            .par_iter()
            .map(|&xi| build(xi, spec.train_references))
            .collect::<Result<Vec<_>>>()?;
        let val = val_xi
            .par_iter()
            .map(|&xi| build(xi, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            coeffs: stencil.coefficients().clone(),
            spec: spec.clone(),
            train,
            val,
        })
    }

    /// Writes `manifest.json` plus `rho_<idx>.fgf` / `ref_<idx>.fgf` into
    /// `dir`. Training samples take indices `0..n_train`, validation samples
    /// follow. The directory is assembled under a temporary name and renamed
    /// into place.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if dir.exists() {
            let is_dataset = dir.join(MANIFEST).is_file();
            let empty = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .next()
                .is_none();
            if !is_dataset && !empty {
                return Err(Error::io(
                    dir,
                    std::io::Error::new(
                        std::io::ErrorKind::AlreadyExists,
                        "refusing to overwrite a non-dataset directory",
                    ),
                ));
            }
        }
        let tmp = tmp_sibling(dir)?;
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let result = self.write_into(&tmp);
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.train.len() + self.val.len());
        let all = self
            .train
            .iter()
            .map(|s| (s, Split::Train))
            .chain(self.val.iter().map(|s| (s, Split::Val)));
        for (idx, (s, split)) in all.enumerate() {
            let rho_name = format!("rho_{idx}.fgf");
            write_field(&dir.join(&rho_name), &s.rho)?;
            let ref_name = match &s.reference {
                Some(r) => {
                    let name = format!("ref_{idx}.fgf");
                    write_field(&dir.join(&name), r)?;
                    Some(name)
                }
                None => None,
            };
            entries.push(ManifestEntry {
                index: idx,
                split,
                xi: [s.xi.0, s.xi.1],
                rho: rho_name,
                reference: ref_name,
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            grid: self.grid,
            coeffs: self.coeffs.clone(),
            spec: self.spec.clone(),
            samples: entries,
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        crate::io::write_atomic(&dir.join(MANIFEST), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::corrupt(&mpath, format!("unknown format '{}'", manifest.format)));
        }
        let grid = Grid::new(manifest.grid.domain, manifest.grid.n, manifest.grid.m)?;
        let spec = manifest.spec;
        let mut train = Vec::new();
        let mut val = Vec::new();
        for e in &manifest.samples {
            let rho = read_field(&dir.join(&e.rho))?;
            grid.check_same(rho.grid())?;
            let xi = (e.xi[0], e.xi[1]);
            let input = input_from_rho(&grid, xi, spec.variant, &rho)?;
            let reference = match &e.reference {
                Some(name) => {
                    let f = read_field(&dir.join(name))?;
                    grid.check_same(f.grid())?;
                    Some(f)
                }
                None => None,
            };
            let s = SourceSample {
                xi,
                rho,
                input,
                reference,
            };
            match e.split {
                Split::Train => train.push(s),
                Split::Val => val.push(s),
            }
        }
        Ok(Self {
            grid,
            coeffs: manifest.coeffs,
            spec,
            train,
            val,
        })
    }
}

fn tmp_sibling(dir: &Path) -> Result<PathBuf> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::corrupt(dir, "dataset path has no final component"))?;
    let tmp_name = format!(".{}.tmp{}", name.to_string_lossy(), std::process::id());
    Ok(match dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => {
            fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
            p.join(tmp_name)
        }
        None => PathBuf::from(tmp_name),
    })
}

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "green-surrogate-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Val,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    index: usize,
    split: Split,
    xi: [f64; 2],
    rho: String,
    #[serde(rename = "ref")]
    reference: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    grid: Grid,
    coeffs: CoefficientSpec,
    spec: DatasetSpec,
    samples: Vec<ManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RectDomain;

    fn grid(n: usize) -> Grid {
        Grid::new(RectDomain::unit_square_sym(), n, n).unwrap()
    }

    #[test]
    fn peak_on_node() {
        let g = grid(9);
        let sigma = 0.3;
        let xi = g.node(3, 5);
        let rho = gaussian_source(&g, xi, sigma).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
        assert!((rho.get(3, 5) - peak).abs() < 1e-14);
        assert_eq!(rho.argmax(), (3, 5));
        assert!(rho.values().iter().all(|v| *v > 0.0));
        assert!(gaussian_source(&g, xi, 0.0).is_err());
        assert!(gaussian_source(&g, xi, -1.0).is_err());
    }

    #[test]
    fn reflection_symmetry() {
        let g = grid(12);
        let xi = (0.23, -0.41);
        let a = gaussian_source(&g, xi, 0.2).unwrap();
        let b = gaussian_source(&g, (-xi.0, -xi.1), 0.2).unwrap();
        for j in 0..g.m {
            for i in 0..g.n {
                let d = (a.get(i, j) - b.get(g.n - 1 - i, g.m - 1 - j)).abs();
                assert!(d < 1e-12 * a.max_abs());
            }
        }
    }

    #[test]
    fn distance_normalization() {
        let g = grid(64);
        let xi = g.node(10, 40);
        let r = distance_field(&g, xi).unwrap();
        assert_eq!(r.get(10, 40), 0.0);
        // farthest corner from (10, 40) on a 64 grid is (63, 0)
        assert_eq!(r.get(63, 0), 1.0);
        assert!(r.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn distance_max_from_center() {
        let g = grid(64);
        // before normalization the max from the center is sqrt(2) at the corners
        let raw = Field::from_fn(g, |x, y| (x * x + y * y).sqrt());
        assert!((raw.max_abs() - 2f64.sqrt()).abs() < 1e-15);
        let r = distance_field(&g, (0.0, 0.0)).unwrap();
        assert_eq!(r.get(0, 0), 1.0);
        assert_eq!(r.get(63, 63), 1.0);
    }

    #[test]
    fn input_variants() {
        let g = grid(8);
        let cfg = SourceConfig::default();
        let xi = (0.1, 0.2);
        let rho = gaussian_source(&g, xi, cfg.sigma(&g)).unwrap();
        let t1 = build_input(&g, xi, InputVariant::Source, &cfg).unwrap();
        assert_eq!(t1.channels, 1);
        assert_eq!(t1.channel(0), rho.values());
        let t2 = build_input(&g, xi, InputVariant::DistanceSource, &cfg).unwrap();
        assert_eq!(t2.channels, 2);
        assert_eq!(t2.channel(0), distance_field(&g, xi).unwrap().values());
        assert_eq!(t2.channel(1), rho.values());
        let t3 = build_input(&g, xi, InputVariant::CoordsSource, &cfg).unwrap();
        assert_eq!(t3.channels, 3);
        assert_eq!(t3.channel(0)[1], g.x(1));
        assert_eq!(t3.channel(1)[g.n], g.y(1));
        assert_eq!(t3.channel(2), rho.values());
        assert!(InputVariant::try_from(4).is_err());
        assert_eq!(build_input(&g, xi, InputVariant::CoordsSource, &cfg).unwrap(), t3);
    }

    #[test]
    fn sampling_contract() {
        let g = grid(64);
        let cfg = SourceConfig {
            seed: 7,
            ..Default::default()
        };
        let a = sample_sources(&g, 2000, &cfg).unwrap();
        let b = sample_sources(&g, 2000, &cfg).unwrap();
        assert_eq!(a, b);
        let lim = 1.0 - 2.0 * g.h1;
        assert!(a.iter().all(|p| p.0.abs() <= lim && p.1.abs() <= lim));
        let other = sample_sources(&g, 10, &SourceConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(other[..], a[..10]);
        // streams are independent of the total count
        assert_eq!(sample_sources(&g, 10, &cfg).unwrap()[..], a[..10]);
        assert!(sample_sources(&g, 0, &cfg).is_err());
    }

    #[test]
    fn margin_too_large() {
        let g = grid(8);
        let cfg = SourceConfig {
            margin_cells: 4,
            ..Default::default()
        };
        assert!(matches!(sample_sources(&g, 3, &cfg), Err(Error::InvalidSource(_))));
        let ok = SourceConfig {
            margin_cells: 3,
            ..Default::default()
        };
        assert!(sample_sources(&g, 3, &ok).is_ok());
    }
}
