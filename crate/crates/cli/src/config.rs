use std::path::{Path, PathBuf};
use std::str::FromStr;

use green_surrogate::{
    CoefficientSpec, DatasetSpec, Error, Grid, RectDomain, Result, TrainConfig, UNetConfig,
};
use serde::{Deserialize, Serialize};

/// Uniform grid on a rectangle; defaults to 64x64 on `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n: usize,
    pub m: usize,
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n: 64,
            m: 64,
            x0: -1.0,
            y0: -1.0,
            lx: 2.0,
            ly: 2.0,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(RectDomain::new(self.x0, self.y0, self.lx, self.ly)?, self.n, self.m)
    }
}

/// `NxM` on the default domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution(pub usize, pub usize);

impl FromStr for Resolution {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NxM, got '{s}'"))?;
        let n = a.trim().parse().map_err(|_| format!("bad grid size '{s}'"))?;
        let m = b.trim().parse().map_err(|_| format!("bad grid size '{s}'"))?;
        Ok(Resolution(n, m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub first_channels: usize,
    pub depth: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            first_channels: 32,
            depth: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Dataset directory written by `gen-data` and read by `train`.
    pub dataset: Option<PathBuf>,
    /// Run directory for checkpoints and history.
    pub run: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub grid: GridSpec,
    pub coeffs: CoefficientSpec,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_precision() -> Precision {
    Precision::F32
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid.build()?;
        self.dataset.source.validate()?;
        if self.dataset.n_val == 0 {
            return Err(Error::InvalidTraining("n_val must be positive".into()));
        }
        if self.dataset.n_train == 0 {
            return Err(Error::InvalidTraining("n_train must be positive".into()));
        }
        green_surrogate::source::admissible_region(&grid, &self.dataset.source)?;
        self.unet(&grid).validate()?;
        self.train.validate()
    }

    pub fn unet(&self, grid: &Grid) -> UNetConfig {
        UNetConfig {
            in_channels: self.dataset.variant.channels(),
            first_channels: self.model.first_channels,
            depth: self.model.depth,
            n: grid.n,
            m: grid.m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_parse() {
        assert_eq!("64x32".parse::<Resolution>().unwrap(), Resolution(64, 32));
        assert!("64".parse::<Resolution>().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"coeffs":"laplace","dataset":{"n_train":1,"n_val":1,"variant":1,"source":{},"train_references":false,"reference":{"method":"direct"}},"bogus":1}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
    }

    #[test]
    fn repro_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../repro");
        let mut seen = 0;
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "json") {
                let cfg = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                cfg.validate().unwrap();
                seen += 1;
            }
        }
        assert!(seen >= 4);
    }
}
