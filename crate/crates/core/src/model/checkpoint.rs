//! Checkpoint files: magic `GSUN`, `u32` version, `u64` header length, a
//! JSON header (config, dtype, metadata), then the parameters as raw
//! little-endian floats in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::unet::{UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::write_atomic;
use crate::losses::KScheduleState;
use crate::operator::CoefficientSpec;
use crate::scalar::Scalar;
use crate::source::{InputVariant, SourceConfig};

const MAGIC: &[u8; 4] = b"GSUN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// The discrete problem a network was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInfo {
    pub grid: Grid,
    pub coeffs: CoefficientSpec,
    pub source: SourceConfig,
    pub variant: InputVariant,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Number of completed epochs when the parameters were captured.
    pub epoch: usize,
    /// Master seed; per-epoch shuffles derive from it and the epoch index.
    pub seed: u64,
    pub k_state: Option<KScheduleState>,
    pub val_metric: Option<f64>,
    pub problem: Option<ProblemInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub net: UNet<T>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: UNetConfig,
    dtype: String,
    param_count: usize,
    meta: CheckpointMeta,
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    let header = Header {
        config: *ck.net.config(),
        dtype: T::DTYPE.to_string(),
        param_count: ck.net.params.len(),
        meta: ck.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + T::BYTES * ck.net.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &ck.net.params {
        p.to_le_bytes_vec(&mut out);
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

fn read_params<U: Scalar, T: Scalar>(body: &[u8]) -> Vec<T> {
    body.chunks_exact(U::BYTES)
        .map(|c| T::of(U::from_le_slice(c).as_f64()))
        .collect()
}

/// Decodes a checkpoint. Parameters stored in the other precision are
/// converted to `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::corrupt(path, "missing GSUN magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::corrupt(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::corrupt(path, format!("bad header: {e}")))?;
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::corrupt(path, format!("unknown dtype '{other}'"))),
    };
    let body = &bytes[body_start..];
    if body.len() != width * header.param_count {
        return Err(Error::corrupt(
            path,
            format!(
                "expected {} parameter bytes, found {}",
                width * header.param_count,
                body.len()
            ),
        ));
    }
    let params = if width == 4 {
        read_params::<f32, T>(body)
    } else {
        read_params::<f64, T>(body)
    };
    let net = UNet::from_params(header.config, params)?;
    Ok(Checkpoint {
        net,
        meta: header.meta,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads a checkpoint and rejects it unless it was built for `expected`.
pub fn load_checkpoint_for<T: Scalar>(path: &Path, expected: &UNetConfig) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint(path)?;
    if ck.net.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {:?}, expected {:?}",
            ck.net.config(),
            expected
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RectDomain;
    use crate::losses::KStrategy;

    fn sample() -> Checkpoint<f32> {
        let cfg = UNetConfig {
            in_channels: 1,
            first_channels: 3,
            depth: 3,
            n: 16,
            m: 8,
        };
        Checkpoint {
            net: UNet::init(cfg, 9).unwrap(),
            meta: CheckpointMeta {
                epoch: 7,
                seed: 42,
                k_state: Some(KScheduleState::new(KStrategy::adaptive())),
                val_metric: Some(0.1 + 0.2),
                problem: Some(ProblemInfo {
                    grid: Grid::new(RectDomain::unit_square_sym(), 16, 8).unwrap(),
                    coeffs: CoefficientSpec::Rd1,
                    source: SourceConfig::default(),
                    variant: InputVariant::Source,
                }),
            },
        }
    }

    #[test]
    fn roundtrip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ck");
        let ck = sample();
        save_checkpoint(&p, &ck).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&p).unwrap();
        assert_eq!(back, ck);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let p = Path::new("x");
        assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_checkpoint::<f32>(&bytes[..20], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint::<f32>(&bad, p).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&v2, p), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn config_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ck");
        let ck = sample();
        save_checkpoint(&p, &ck).unwrap();
        let mut other = *ck.net.config();
        other.first_channels = 4;
        assert!(matches!(
            load_checkpoint_for::<f32>(&p, &other),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(load_checkpoint_for::<f32>(&p, ck.net.config()).is_ok());
    }

    #[test]
    fn precision_conversion_on_load() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        let wide: Checkpoint<f64> = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        assert_eq!(wide.net.cast::<f32>(), sample().net);
    }
}
