//! Big-endian IDX files as distributed for MNIST.

use std::path::Path;

use domgen_core::data::{digit_class_names, LabeledImageSet};

use super::{read_file, ByteReader};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// `(N, H, W, pixels)` from an IDX3 ubyte image file.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = ByteReader::new(bytes, "IDX");
    let magic = r.u32_be("magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format("IDX", format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let n = r.u32_be("count")? as usize;
    let h = r.u32_be("rows")? as usize;
    let w = r.u32_be("cols")? as usize;
    let len = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format("IDX", "image dimensions overflow"))?;
    let pixels = r.take(len, "image payload")?.to_vec();
    r.finish()?;
    Ok((n, h, w, pixels))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = ByteReader::new(bytes, "IDX");
    let magic = r.u32_be("magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format("IDX", format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = r.u32_be("count")? as usize;
    let labels = r.take(n, "label payload")?.to_vec();
    r.finish()?;
    Ok(labels)
}

/// Pairs an image file with its label file; classes are the digits 0-9.
pub fn decode_idx(images: &[u8], labels: &[u8]) -> Result<LabeledImageSet> {
    let (n, h, w, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::format("IDX", format!("{n} images but {} labels", labels.len())));
    }
    Ok(LabeledImageSet::new(1, h, w, pixels, labels, digit_class_names())?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    decode_idx(&read_file(images_path)?, &read_file(labels_path)?)
}

/// Image and label file bytes for a single-channel set.
pub fn encode_idx(set: &LabeledImageSet) -> Result<(Vec<u8>, Vec<u8>)> {
    if set.channels() != 1 {
        return Err(Error::format("IDX", "only single-channel sets can be written"));
    }
    let n = set.len() as u32;
    let mut images = Vec::with_capacity(16 + set.pixels().len());
    for v in [IMAGES_MAGIC, n, set.height() as u32, set.width() as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend_from_slice(set.pixels());
    let mut labels = Vec::with_capacity(8 + set.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    labels.extend_from_slice(set.labels());
    Ok((images, labels))
}
