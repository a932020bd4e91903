//! CIFAR-10 binary batches: one label byte then 3072 channel-planar RGB bytes per record.

use std::path::Path;

use domgen_core::data::LabeledImageSet;

use super::read_file;
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const RECORD_LEN: usize = 1 + 3 * SIDE * SIDE;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

fn class_names() -> Vec<String> {
    CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// Decodes the concatenation of one or more batch files.
pub fn decode_cifar10(bytes: &[u8]) -> Result<LabeledImageSet> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::format(
            "CIFAR-10",
            format!("{} bytes is not a positive multiple of {RECORD_LEN}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_LEN - 1));
    for rec in bytes.chunks_exact(RECORD_LEN) {
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(LabeledImageSet::new(3, SIDE, SIDE, pixels, labels, class_names())?)
}

pub fn load_cifar10_binary(paths: &[impl AsRef<Path>]) -> Result<LabeledImageSet> {
    let mut all = Vec::new();
    for p in paths {
        let bytes = read_file(p.as_ref())?;
        if !bytes.len().is_multiple_of(RECORD_LEN) {
            return Err(Error::format(
                "CIFAR-10",
                format!("{}: length {} is not a multiple of {RECORD_LEN}", p.as_ref().display(), bytes.len()),
            ));
        }
        all.extend(bytes);
    }
    decode_cifar10(&all)
}

pub fn encode_cifar10(set: &LabeledImageSet) -> Result<Vec<u8>> {
    if set.image_shape() != [3, SIDE, SIDE] {
        return Err(Error::format("CIFAR-10", format!("image shape {:?}", set.image_shape())));
    }
    let mut out = Vec::with_capacity(set.len() * RECORD_LEN);
    for i in 0..set.len() {
        out.push(set.labels()[i]);
        out.extend_from_slice(set.image(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record_round_trip() {
        let mut rec = vec![6u8];
        rec.extend((0..3072).map(|i| (i % 251) as u8));
        let set = decode_cifar10(&rec).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.class_names()[set.labels()[0] as usize], "frog");
        assert_eq!(set.image(0)[1024], (1024 % 251) as u8);
        assert_eq!(encode_cifar10(&set).unwrap(), rec);
    }

    #[test]
    fn bad_lengths_and_labels() {
        assert!(decode_cifar10(&[]).is_err());
        assert!(decode_cifar10(&vec![0u8; RECORD_LEN - 1]).is_err());
        assert!(decode_cifar10(&vec![0u8; RECORD_LEN + 1]).is_err());
        let mut rec = vec![0u8; RECORD_LEN];
        rec[0] = 10;
        assert!(decode_cifar10(&rec).is_err());
    }
}
