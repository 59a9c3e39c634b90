use std::fs;
use std::path::Path;

use super::{Condition, Dataset, Domain};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses big-endian IDX image and label buffers. Pixels are scaled by 1/255.
pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("images declare {n} items but labels declare {n_labels}")));
    }
    let px = n * rows * cols;
    let pixels = images
        .get(16..16 + px)
        .filter(|_| images.len() == 16 + px)
        .ok_or_else(|| Error::Format(format!("images: expected {px} pixel bytes, found {}", images.len().saturating_sub(16))))?;
    let lab = labels
        .get(8..8 + n)
        .filter(|_| labels.len() == 8 + n)
        .ok_or_else(|| Error::Format(format!("labels: expected {n} label bytes, found {}", labels.len().saturating_sub(8))))?;
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, rows, cols], data).map_err(|e| Error::Format(e.to_string()))?;
    Dataset::new(
        images,
        lab.iter().map(|&l| l as usize).collect(),
        Domain::PublicDomain,
        vec![Condition::Standard; n],
    )
}

pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path.as_ref()).map_err(|e| Error::io(images_path.as_ref(), e))?;
    let labels = fs::read(labels_path.as_ref()).map_err(|e| Error::io(labels_path.as_ref(), e))?;
    parse_mnist_idx(&images, &labels)
}

/// Encodes single-channel images as IDX3; pixels are rounded from `x·255`.
pub fn encode_idx_images(ds: &Dataset) -> Result<Vec<u8>> {
    let s = ds.images.shape();
    if s[1] != 1 {
        return Err(Error::Format(format!("IDX images must be single-channel, got {s:?}")));
    }
    let mut out = Vec::with_capacity(16 + ds.images.len());
    for v in [IDX_IMAGES_MAGIC, s[0] as u32, s[2] as u32, s[3] as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(ds.images.data().iter().map(|&p| (p * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + ds.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        out.push(u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?);
    }
    Ok(out)
}

pub fn write_mnist_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    fs::write(images_path.as_ref(), encode_idx_images(ds)?).map_err(|e| Error::io(images_path.as_ref(), e))?;
    fs::write(labels_path.as_ref(), encode_idx_labels(ds)?).map_err(|e| Error::io(labels_path.as_ref(), e))
}
