use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{IMAGE_SIDE, NUM_CLASSES};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Adversarial,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::Clean => 0,
            Provenance::Adversarial => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Provenance::Clean),
            1 => Some(Provenance::Adversarial),
            _ => None,
        }
    }
}

/// `name:version` handle for a registry dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub version: String,
}

impl DatasetRef {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Self {
        DatasetRef {
            name: name.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.version)
    }
}

impl FromStr for DatasetRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((n, v)) if !n.is_empty() && !v.is_empty() => Ok(DatasetRef::new(n, v)),
            _ => Err(Error::validation(format!(
                "dataset reference must be name:version, got {s:?}"
            ))),
        }
    }
}

/// Labeled 28×28 grayscale images with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<u8>,
    name: String,
    version: String,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<u8>,
        name: impl Into<String>,
        version: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let shape = images.shape();
        if !matches!(shape, [_, 1, IMAGE_SIDE, IMAGE_SIDE]) {
            return Err(Error::InputShape {
                expected: "N×1×28×28".into(),
                actual: shape.to_vec(),
            });
        }
        if images.rows() != labels.len() {
            return Err(Error::validation(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::validation(format!("label {bad} out of range [0, 9]")));
        }
        if let Some(bad) = images.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(LabeledDataset {
            images,
            labels,
            name: name.into(),
            version: version.into(),
            provenance,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn reference(&self) -> DatasetRef {
        DatasetRef::new(&self.name, &self.version)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn with_identity(mut self, name: impl Into<String>, version: impl Into<String>) -> Self {
        self.name = name.into();
        self.version = version.into();
        self
    }

    /// Images and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>)> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((images, labels))
    }

    /// Contiguous sub-range `[start, end)` as a dataset of its own.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::validation(format!(
                "invalid slice {start}..{end} of {} samples",
                self.len()
            )));
        }
        let indices: Vec<usize> = (start..end).collect();
        let (images, labels) = self.batch(&indices)?;
        LabeledDataset::new(images, labels, &self.name, &self.version, self.provenance)
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Result<Self> {
        self.slice(0, n.min(self.len()))
    }

    /// Splits into consecutive batches of at most `batch_size` indices.
    pub fn batch_ranges(&self, batch_size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let n = self.len();
        (0..n)
            .step_by(batch_size.max(1))
            .map(move |s| (s..(s + batch_size).min(n)).collect())
    }

    /// True when every pixel survives a round trip through `f32`.
    pub fn is_storage_exact(&self) -> bool {
        self.images
            .values()
            .iter()
            .all(|&v| (v as f32) as f64 == v)
    }
}

/// Rounds `target` to the nearest `f32`, stepping one ulp back toward
/// `origin` if rounding moved it further away. The result is never further
/// from `origin` than `target` was, so L∞ bounds and `[0, 1]` clipping
/// survive storage quantization.
pub fn quantize_toward(origin: f64, target: f64) -> f64 {
    let q = target as f32;
    if ((q as f64) - origin).abs() <= (target - origin).abs() {
        return q as f64;
    }
    let stepped = if (q as f64) > target {
        q.next_down()
    } else {
        q.next_up()
    };
    stepped as f64
}
