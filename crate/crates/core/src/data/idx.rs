//! IDX reader for MNIST-style image/label files, plain or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::data::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::model::IMAGE_SIDE;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: format!("truncated header ({} bytes)", bytes.len()),
        })
}

/// Raw image bytes plus the image count.
pub fn read_images(path: &Path) -> Result<(Vec<u8>, usize)> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("unsupported image size {rows}×{cols}, expected 28×28"),
        });
    }
    let body = &bytes[16..];
    let need = count * rows * cols;
    if body.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("truncated pixel data: {} of {need} bytes", body.len()),
        });
    }
    Ok((body[..need].to_vec(), count))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("truncated label data: {} of {count} bytes", body.len()),
        });
    }
    Ok(body[..count].to_vec())
}

/// Loads an image/label IDX pair, scaling bytes to `[0, 1]` by `/255`.
///
/// Pixels are computed in `f32` and widened, so every value is exactly
/// representable in the registry container. The dataset is named after the
/// image file stem with version `"1"`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (pixels, count) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Consistency {
            path: labels_path.to_path_buf(),
            msg: format!("{} labels for {count} images", labels.len()),
        });
    }
    if count == 0 {
        return Err(Error::Consistency {
            path: images_path.to_path_buf(),
            msg: "no images".into(),
        });
    }
    let values = pixels.iter().map(|&b| (b as f32 / 255.0) as f64).collect();
    let images = Tensor::new(vec![count, 1, IMAGE_SIDE, IMAGE_SIDE], values)?;
    let name = images_path
        .file_name()
        .and_then(|s| s.to_str())
        .map(|s| s.split('.').next().unwrap_or(s).to_string())
        .unwrap_or_else(|| "idx".into());
    LabeledDataset::new(images, labels, name, "1", Provenance::Clean)
}
