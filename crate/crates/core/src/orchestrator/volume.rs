//! File-based model volume.
//!
//! Layout: `<root>/volume/models/<model_id>/{params.bin, meta.json}`.
//!
//! `params.bin` (little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `ADVM` |
//! | 2 | format version (`u16`, currently 1) |
//! | 1 | architecture (0 small CNN, 1 MLP) |
//! | 4 | MLP hidden width (`u32`, 0 for the CNN) |
//! | 4 | layer count (`u32`) |
//!
//! then per layer: kind byte; for parameterised layers a weight rank byte,
//! the weight dims (`u32` each), the bias length (`u32`), then the weight and
//! bias values as `f64`.

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::nn::{layer_from_parts, Architecture, LayerKind, Model, TrainConfig};
use crate::store::{check_component, publish_dir, read_file, sha256_hex, subdirs};
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &[u8; 4] = b"ADVM";
pub const PARAMS_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Baseline,
    Hardened,
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelRole::Baseline => "baseline",
            ModelRole::Hardened => "hardened",
        })
    }
}

/// Everything stored next to the parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub role: ModelRole,
    pub architecture: Architecture,
    /// α_A for a baseline; clean accuracy for a hardened model.
    pub baseline_accuracy: f64,
    pub train_config: Option<TrainConfig>,
    pub defense_config: Option<DefenseConfig>,
    pub parent_model_id: Option<String>,
    pub checksum: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct ModelRecord {
    pub meta: ModelMeta,
    pub model: Model,
}

/// A model about to be stored; id, checksum and timestamp are assigned by
/// the volume.
#[derive(Debug, Clone)]
pub struct NewModel {
    pub role: ModelRole,
    pub model: Model,
    pub baseline_accuracy: f64,
    pub train_config: Option<TrainConfig>,
    pub defense_config: Option<DefenseConfig>,
    pub parent_model_id: Option<String>,
}

pub fn encode_params(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * model.param_count());
    out.extend_from_slice(PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    let arch = model.architecture();
    out.push(arch.code());
    let hidden = match arch {
        Architecture::Mlp { hidden } => hidden as u32,
        Architecture::SmallCnn => 0,
    };
    out.extend_from_slice(&hidden.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.push(layer.kind().code());
        if let Some((w, b)) = layer.params() {
            out.push(w.shape().len() as u8);
            for &d in w.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            for &v in w.values().iter().chain(b.values()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| self.err("parameter count overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != PARAMS_MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != PARAMS_VERSION {
        return Err(r.err(format!("unsupported params version {version}")));
    }
    let code = r.u8()?;
    let hidden = r.u32()?;
    let arch = match code {
        0 => Architecture::SmallCnn,
        1 => Architecture::Mlp { hidden },
        other => return Err(r.err(format!("unknown architecture byte {other}"))),
    };
    let count = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let kind_code = r.u8()?;
        let kind = LayerKind::from_code(kind_code)
            .ok_or_else(|| r.err(format!("unknown layer kind {kind_code}")))?;
        let params = match kind {
            LayerKind::Conv2d | LayerKind::Dense => {
                let rank = r.u8()? as usize;
                let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let bias_len = r.u32()?;
                let wlen = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let wlen = wlen.ok_or_else(|| r.err("weight size overflows"))?;
                let w = r.f64s(wlen)?;
                let b = r.f64s(bias_len)?;
                let bad = |e: Error| Error::Format {
                    path: path.to_path_buf(),
                    msg: e.to_string(),
                };
                Some((
                    Tensor::new(dims, w).map_err(bad)?,
                    Tensor::new(vec![bias_len], b).map_err(bad)?,
                ))
            }
            _ => None,
        };
        layers.push(layer_from_parts(kind, params)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Model::from_layers(arch, layers).map_err(|e| r.err(e.to_string()))
}

/// Handle on the model volume under a workspace directory.
#[derive(Debug, Clone)]
pub struct ModelVolume {
    root: PathBuf,
}

impl ModelVolume {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        ModelVolume {
            root: workspace.into().join("volume").join("models"),
        }
    }

    /// Stores a record. The id is derived from role and parameter checksum,
    /// so identical models get identical ids.
    pub fn store(&self, new: NewModel) -> Result<ModelRecord> {
        if !(0.0..=1.0).contains(&new.baseline_accuracy) {
            return Err(Error::validation(format!(
                "accuracy {} outside [0, 1]",
                new.baseline_accuracy
            )));
        }
        match (new.role, &new.parent_model_id, &new.defense_config) {
            (ModelRole::Baseline, None, None) => {}
            (ModelRole::Baseline, _, _) => {
                return Err(Error::validation(
                    "baseline records carry no parent or defense config",
                ))
            }
            (ModelRole::Hardened, Some(parent), Some(_)) => {
                let p = self.meta(parent)?;
                if p.role != ModelRole::Baseline {
                    return Err(Error::validation(format!("parent {parent} is not a baseline")));
                }
            }
            (ModelRole::Hardened, _, _) => {
                return Err(Error::validation(
                    "hardened records need a parent baseline and a defense config",
                ))
            }
        }
        let blob = encode_params(&new.model);
        let checksum = sha256_hex(&blob);
        let model_id = format!("{}-{}", new.role, &checksum[..16]);
        let meta = ModelMeta {
            model_id: model_id.clone(),
            role: new.role,
            architecture: new.model.architecture(),
            baseline_accuracy: new.baseline_accuracy,
            train_config: new.train_config,
            defense_config: new.defense_config,
            parent_model_id: new.parent_model_id,
            checksum,
            created_at: Utc::now(),
        };
        let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json("meta.json", e))?;
        publish_dir(
            &self.root.join(&model_id),
            &[("params.bin", &blob), ("meta.json", &meta_json)],
        )
        .map_err(|e| match e {
            Error::Conflict(_) => Error::Conflict(format!("model {model_id}")),
            other => other,
        })?;
        Ok(ModelRecord {
            meta,
            model: new.model,
        })
    }

    pub fn meta(&self, model_id: &str) -> Result<ModelMeta> {
        check_component("model id", model_id)?;
        let path = self.root.join(model_id).join("meta.json");
        if !path.exists() {
            return Err(Error::NotFound(format!("model {model_id}")));
        }
        serde_json::from_slice(&read_file(&path)?).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Raw parameter blob after checksum verification.
    pub fn params_blob(&self, model_id: &str) -> Result<Vec<u8>> {
        let meta = self.meta(model_id)?;
        let path = self.root.join(model_id).join("params.bin");
        let bytes = read_file(&path)?;
        let actual = sha256_hex(&bytes);
        if actual != meta.checksum {
            return Err(Error::Corruption {
                path,
                expected: meta.checksum,
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn load(&self, model_id: &str) -> Result<ModelRecord> {
        let meta = self.meta(model_id)?;
        let path = self.root.join(model_id).join("params.bin");
        let model = decode_params(&self.params_blob(model_id)?, &path)?;
        Ok(ModelRecord { meta, model })
    }

    /// All records' metadata, sorted by id.
    pub fn list(&self) -> Result<Vec<ModelMeta>> {
        subdirs(&self.root)?.iter().map(|id| self.meta(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline(model: Model) -> NewModel {
        NewModel {
            role: ModelRole::Baseline,
            model,
            baseline_accuracy: 0.9,
            train_config: Some(TrainConfig::default()),
            defense_config: None,
            parent_model_id: None,
        }
    }

    #[test]
    fn store_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ModelVolume::new(dir.path());
        for arch in [Architecture::SmallCnn, Architecture::Mlp { hidden: 5 }] {
            let m = Model::new(arch, 3).unwrap();
            let rec = vol.store(baseline(m.clone())).unwrap();
            let back = vol.load(&rec.meta.model_id).unwrap();
            assert_eq!(back.model, m);
            assert_eq!(back.meta, rec.meta);
            assert_eq!(encode_params(&back.model), encode_params(&m));
        }
        assert_eq!(vol.list().unwrap().len(), 2);
    }

    #[test]
    fn unknown_id_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ModelVolume::new(dir.path());
        assert!(matches!(vol.load("baseline-0000"), Err(Error::NotFound(_))));
    }

    #[test]
    fn corrupt_byte_detected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ModelVolume::new(dir.path());
        let rec = vol.store(baseline(Model::new(Architecture::Mlp { hidden: 3 }, 0).unwrap())).unwrap();
        let path = dir.path().join("volume/models").join(&rec.meta.model_id).join("params.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 0x80;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(vol.load(&rec.meta.model_id), Err(Error::Corruption { .. })));
    }

    #[test]
    fn hardened_needs_existing_baseline_parent() {
        let dir = tempfile::tempdir().unwrap();
        let vol = ModelVolume::new(dir.path());
        let m = Model::new(Architecture::Mlp { hidden: 3 }, 0).unwrap();
        let hardened = |parent: Option<String>| NewModel {
            role: ModelRole::Hardened,
            model: Model::new(Architecture::Mlp { hidden: 3 }, 1).unwrap(),
            baseline_accuracy: 0.8,
            train_config: None,
            defense_config: Some(DefenseConfig::default()),
            parent_model_id: parent,
        };
        assert!(vol.store(hardened(None)).is_err());
        assert!(matches!(vol.store(hardened(Some("baseline-x".into()))), Err(Error::NotFound(_))));
        let base = vol.store(baseline(m)).unwrap();
        let h = vol.store(hardened(Some(base.meta.model_id.clone()))).unwrap();
        assert_eq!(h.meta.parent_model_id.as_deref(), Some(base.meta.model_id.as_str()));
        assert!(vol.store(hardened(Some(h.meta.model_id.clone()))).is_err());
    }

    #[test]
    fn params_header_layout() {
        let m = Model::zeros(Architecture::Mlp { hidden: 2 }).unwrap();
        let b = encode_params(&m);
        assert_eq!(&b[..4], b"ADVM");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(b[6], 1);
        assert_eq!(&b[7..11], &[2, 0, 0, 0]);
        assert_eq!(&b[11..15], &[3, 0, 0, 0]);
        assert_eq!(b.len(), 15 + (1 + 1 + 8 + 4) * 2 + 1 + 8 * m.param_count());
        assert!(decode_params(&b[..b.len() - 1], Path::new("x")).is_err());
    }
}
