//! Versioned on-disk dataset registry.
//!
//! Layout: `<root>/datasets/<name>/<version>/{data.bin, meta.json}`.
//!
//! `data.bin` container (little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `ADVD` |
//! | 2 | format version (`u16`, currently 1) |
//! | 4 × 3 | N, H = 28, W = 28 (`u32`) |
//! | 1 | provenance (0 clean, 1 adversarial) |
//! | N | labels |
//! | 4 · N·H·W | pixels (`f32`) |

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{DatasetRef, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::model::IMAGE_SIDE;
use crate::store::{check_component, publish_dir, read_file, sha256_hex, subdirs};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"ADVD";
pub const CONTAINER_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 12 + 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub version: String,
    pub path: PathBuf,
    pub provenance: Provenance,
    pub checksum: String,
    pub created_at: DateTime<Utc>,
}

impl RegistryEntry {
    pub fn reference(&self) -> DatasetRef {
        DatasetRef::new(&self.name, &self.version)
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    name: String,
    version: String,
    provenance: Provenance,
    checksum: String,
    created_at: DateTime<Utc>,
}

/// Serializes a dataset into the registry container. Fails if any pixel is
/// not exactly representable as `f32`.
pub fn encode_container(d: &LabeledDataset) -> Result<Vec<u8>> {
    if !d.is_storage_exact() {
        return Err(Error::validation(format!(
            "dataset {} has pixels that are not exactly representable as f32; \
             quantize before storing",
            d.reference()
        )));
    }
    let n = d.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n + 4 * d.images().len());
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    for v in [n, IMAGE_SIDE, IMAGE_SIDE] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(d.provenance().code());
    out.extend_from_slice(d.labels());
    for &p in d.images().values() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_container(
    bytes: &[u8],
    name: &str,
    version: &str,
    path: &Path,
) -> Result<LabeledDataset> {
    let fmt_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CONTAINER_MAGIC {
        return Err(fmt_err(format!("bad magic {:?}", &bytes[..4])));
    }
    let version_tag = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version_tag != CONTAINER_VERSION {
        return Err(fmt_err(format!("unsupported container version {version_tag}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (n, h, w) = (u32_at(6), u32_at(10), u32_at(14));
    if h != IMAGE_SIDE || w != IMAGE_SIDE {
        return Err(fmt_err(format!("unsupported image size {h}×{w}")));
    }
    let provenance = Provenance::from_code(bytes[18])
        .ok_or_else(|| fmt_err(format!("unknown provenance byte {}", bytes[18])))?;
    let pixels = n * h * w;
    let expected = HEADER_LEN + n + 4 * pixels;
    if bytes.len() != expected {
        return Err(fmt_err(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let labels = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
    let values = bytes[HEADER_LEN + n..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let images = Tensor::new(vec![n, 1, h, w], values).map_err(|e| fmt_err(e.to_string()))?;
    LabeledDataset::new(images, labels, name, version, provenance)
        .map_err(|e| fmt_err(e.to_string()))
}

/// Handle on a registry rooted at a workspace directory.
#[derive(Debug, Clone)]
pub struct DatasetRegistry {
    root: PathBuf,
}

impl DatasetRegistry {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        DatasetRegistry {
            root: workspace.into().join("datasets"),
        }
    }

    fn entry_dir(&self, name: &str, version: &str) -> PathBuf {
        self.root.join(name).join(version)
    }

    /// Publishes a dataset under its own `(name, version)`.
    pub fn put(&self, dataset: &LabeledDataset) -> Result<RegistryEntry> {
        check_component("dataset name", dataset.name())?;
        check_component("dataset version", dataset.version())?;
        let dir = self.entry_dir(dataset.name(), dataset.version());
        if dir.exists() {
            return Err(Error::Conflict(format!("dataset {}", dataset.reference())));
        }
        let data = encode_container(dataset)?;
        let meta = Meta {
            name: dataset.name().to_string(),
            version: dataset.version().to_string(),
            provenance: dataset.provenance(),
            checksum: sha256_hex(&data),
            created_at: Utc::now(),
        };
        let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json("meta.json", e))?;
        publish_dir(&dir, &[("data.bin", &data), ("meta.json", &meta_json)]).map_err(|e| match e {
            Error::Conflict(_) => Error::Conflict(format!("dataset {}", dataset.reference())),
            other => other,
        })?;
        Ok(RegistryEntry {
            name: meta.name,
            version: meta.version,
            path: dir,
            provenance: meta.provenance,
            checksum: meta.checksum,
            created_at: meta.created_at,
        })
    }

    pub fn entry(&self, name: &str, version: &str) -> Result<RegistryEntry> {
        check_component("dataset name", name)?;
        check_component("dataset version", version)?;
        let dir = self.entry_dir(name, version);
        let meta_path = dir.join("meta.json");
        if !meta_path.exists() {
            return Err(Error::NotFound(format!("dataset {name}:{version}")));
        }
        let meta: Meta = serde_json::from_slice(&read_file(&meta_path)?)
            .map_err(|e| Error::json(meta_path.display().to_string(), e))?;
        Ok(RegistryEntry {
            name: meta.name,
            version: meta.version,
            path: dir,
            provenance: meta.provenance,
            checksum: meta.checksum,
            created_at: meta.created_at,
        })
    }

    /// Loads a dataset after verifying its checksum.
    pub fn get(&self, name: &str, version: &str) -> Result<LabeledDataset> {
        let entry = self.entry(name, version)?;
        let data_path = entry.path.join("data.bin");
        let bytes = read_file(&data_path)?;
        let actual = sha256_hex(&bytes);
        if actual != entry.checksum {
            return Err(Error::Corruption {
                path: data_path,
                expected: entry.checksum,
                actual,
            });
        }
        decode_container(&bytes, name, version, &data_path)
    }

    pub fn get_ref(&self, r: &DatasetRef) -> Result<LabeledDataset> {
        self.get(&r.name, &r.version)
    }

    /// Every entry, sorted by `(name, version)`.
    pub fn list(&self) -> Result<Vec<RegistryEntry>> {
        let mut out = Vec::new();
        for name in subdirs(&self.root)? {
            for version in subdirs(&self.root.join(&name))? {
                out.push(self.entry(&name, &version)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::make_synthetic;

    #[test]
    fn put_get_list() {
        let dir = tempfile::tempdir().unwrap();
        let reg = DatasetRegistry::new(dir.path());
        let d = make_synthetic(2, 3, 0).unwrap().with_identity("b", "v1");
        let e = reg.put(&d).unwrap();
        assert_eq!(e.checksum.len(), 64);
        reg.put(&d.clone().with_identity("a", "v2")).unwrap();
        reg.put(&d.clone().with_identity("a", "v1")).unwrap();
        assert_eq!(reg.get("b", "v1").unwrap(), d);
        let names: Vec<_> = reg
            .list()
            .unwrap()
            .iter()
            .map(|e| e.reference().to_string())
            .collect();
        assert_eq!(names, vec!["a:v1", "a:v2", "b:v1"]);
    }

    #[test]
    fn duplicate_put_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let reg = DatasetRegistry::new(dir.path());
        let d = make_synthetic(1, 2, 0).unwrap();
        reg.put(&d).unwrap();
        assert!(matches!(reg.put(&d), Err(Error::Conflict(_))));
    }

    #[test]
    fn missing_entry_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let reg = DatasetRegistry::new(dir.path());
        assert!(matches!(reg.get("nope", "1"), Err(Error::NotFound(_))));
        assert!(reg.list().unwrap().is_empty());
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let reg = DatasetRegistry::new(dir.path());
        let d = make_synthetic(1, 2, 0).unwrap();
        let entry = reg.put(&d).unwrap();
        let path = entry.path.join("data.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        assert_eq!(sha256_hex(&bytes), entry.checksum);
        bytes[HEADER_LEN + 5] ^= 0x01;
        let tampered = sha256_hex(&bytes);
        std::fs::write(&path, &bytes).unwrap();
        match reg.get(d.name(), d.version()) {
            Err(Error::Corruption { expected, actual, .. }) => {
                assert_eq!(expected, entry.checksum);
                assert_eq!(actual, tampered);
            }
            other => panic!("expected corruption, got {other:?}"),
        }
    }

    #[test]
    fn non_f32_pixels_are_rejected() {
        let images = Tensor::new(vec![1, 1, 28, 28], vec![0.1; 784]).unwrap();
        let d = LabeledDataset::new(images, vec![0], "x", "1", Provenance::Clean).unwrap();
        assert!(encode_container(&d).is_err());
    }

    #[test]
    fn container_header_layout() {
        let d = make_synthetic(1, 2, 0).unwrap();
        let bytes = encode_container(&d).unwrap();
        assert_eq!(&bytes[..4], b"ADVD");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[28, 0, 0, 0]);
        assert_eq!(bytes[18], 0);
        assert_eq!(&bytes[19..21], &[0, 1]);
        assert_eq!(bytes.len(), 19 + 2 + 4 * 2 * 784);
    }
}
