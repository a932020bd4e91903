//! Which resize, grayscale and label-intersection steps a dataset pairing needs.

use std::fmt;
use std::str::FromStr;

use domgen_core::augment::DomainKind;
use domgen_core::data::{intersect_labels, resize, to_grayscale, DomainPair, LabeledImageSet, CIFAR10_STL10_CLASS_MAP};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Mnist,
    Usps,
    Svhn,
    Cifar10,
    Stl10,
}

impl DatasetId {
    pub const ALL: [DatasetId; 5] = [
        DatasetId::Mnist,
        DatasetId::Usps,
        DatasetId::Svhn,
        DatasetId::Cifar10,
        DatasetId::Stl10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Usps => "usps",
            DatasetId::Svhn => "svhn",
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Stl10 => "stl10",
        }
    }

    pub fn kind(self) -> DomainKind {
        match self {
            DatasetId::Mnist | DatasetId::Usps | DatasetId::Svhn => DomainKind::Digits,
            DatasetId::Cifar10 | DatasetId::Stl10 => DomainKind::Objects,
        }
    }

    /// Channels of the published images.
    pub fn native_channels(self) -> usize {
        match self {
            DatasetId::Mnist | DatasetId::Usps => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetId::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown dataset id `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Square side every image is resized to.
    pub size: usize,
    pub grayscale_source: bool,
    pub grayscale_target: bool,
    /// Restrict both sides to the CIFAR-10 / STL-10 shared classes.
    pub intersect_classes: bool,
    pub kind: DomainKind,
}

/// Pairings with USPS run at 16x16, all others at 32x32; SVHN is turned gray
/// next to a single-channel digit set; CIFAR-10 and STL-10 keep 9 shared classes.
pub fn resolve_preprocessing(source: DatasetId, target: DatasetId) -> Result<Preprocessing> {
    if source == target {
        return Err(Error::Config(format!("source and target are both {source}")));
    }
    if source.kind() != target.kind() {
        return Err(Error::Config(format!("{source} and {target} have different label spaces")));
    }
    let involves = |d| source == d || target == d;
    let gray = |d: DatasetId, other: DatasetId| d == DatasetId::Svhn && other.native_channels() == 1;
    Ok(Preprocessing {
        size: if involves(DatasetId::Usps) { 16 } else { 32 },
        grayscale_source: gray(source, target),
        grayscale_target: gray(target, source),
        intersect_classes: involves(DatasetId::Cifar10) && involves(DatasetId::Stl10),
        kind: source.kind(),
    })
}

fn prepare(set: LabeledImageSet, gray: bool, size: usize) -> Result<LabeledImageSet> {
    let set = if gray && set.channels() == 3 { to_grayscale(&set)? } else { set };
    if set.height() == size && set.width() == size {
        Ok(set)
    } else {
        Ok(resize(&set, size, size)?)
    }
}

/// Applies `pre` to loaded source and target sets.
pub fn apply_preprocessing(
    pre: &Preprocessing,
    source_id: DatasetId,
    source: LabeledImageSet,
    target: LabeledImageSet,
) -> Result<DomainPair> {
    let source = prepare(source, pre.grayscale_source, pre.size)?;
    let target = prepare(target, pre.grayscale_target, pre.size)?;
    let pair = if pre.intersect_classes {
        let map: Vec<(&str, &str)> = if source_id == DatasetId::Cifar10 {
            CIFAR10_STL10_CLASS_MAP.to_vec()
        } else {
            CIFAR10_STL10_CLASS_MAP.iter().map(|&(c, s)| (s, c)).collect()
        };
        intersect_labels(&source, &target, &map)?
    } else {
        DomainPair { source, target }
    };
    if pair.source.class_names() != pair.target.class_names() {
        return Err(Error::Config(format!(
            "class names differ: {:?} vs {:?}",
            pair.source.class_names(),
            pair.target.class_names()
        )));
    }
    if pair.source.image_shape() != pair.target.image_shape() {
        return Err(Error::Config(format!(
            "image shapes differ after preprocessing: {:?} vs {:?}",
            pair.source.image_shape(),
            pair.target.image_shape()
        )));
    }
    Ok(pair)
}
