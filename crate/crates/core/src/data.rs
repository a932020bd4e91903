//! Labeled `u8` image sets and the preprocessing used to align two domains.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Images (`N x C x H x W` bytes) with one label per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImageSet {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
    class_names: Vec<String>,
}

impl LabeledImageSet {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(alloc::format!(
                "degenerate image shape {channels}x{height}x{width}"
            )));
        }
        if pixels.len() != labels.len() * channels * height * width {
            return Err(Error::Shape(alloc::format!(
                "{} pixel bytes for {} images of {channels}x{height}x{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if class_names.is_empty() || class_names.len() > 256 {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} class names",
                class_names.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad as usize,
                classes: class_names.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.image_len();
        &self.pixels[i * len..(i + 1) * len]
    }

    /// A new set holding the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self::new(
            self.channels,
            self.height,
            self.width,
            pixels,
            labels,
            self.class_names.clone(),
        )
    }

    /// `n` samples drawn without replacement, kept in original order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "cannot draw {n} of {} samples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::seeded(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }

    /// Images at `indices` as an `n x C x H x W` tensor scaled to `[0, 1]`.
    pub fn batch_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&p| p as f32 / 255.0));
        }
        Tensor::from_vec(
            &[indices.len(), self.channels, self.height, self.width],
            data,
        )
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Source and target sets sharing one label space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainPair {
    pub source: LabeledImageSet,
    pub target: LabeledImageSet,
}

/// Whole set as floats: `pixel / 255`.
pub fn to_float(set: &LabeledImageSet) -> Tensor {
    let idx: Vec<usize> = (0..set.len()).collect();
    set.batch_tensor(&idx)
        .expect("a validated set always forms a tensor")
}

/// Rounds half up and clamps into the byte range.
fn round_u8(v: f64) -> u8 {
    libm::floor(v + 0.5).clamp(0.0, 255.0) as u8
}

/// BT.601 luma: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(set: &LabeledImageSet) -> Result<LabeledImageSet> {
    if set.channels != 3 {
        return Err(Error::InvalidArgument(alloc::format!(
            "grayscale conversion needs 3 channels, set has {}",
            set.channels
        )));
    }
    let plane = set.height * set.width;
    let mut pixels = Vec::with_capacity(set.len() * plane);
    for i in 0..set.len() {
        let img = set.image(i);
        let (r, rest) = img.split_at(plane);
        let (g, b) = rest.split_at(plane);
        for j in 0..plane {
            pixels.push(round_u8(
                0.299 * r[j] as f64 + 0.587 * g[j] as f64 + 0.114 * b[j] as f64,
            ));
        }
    }
    LabeledImageSet::new(
        1,
        set.height,
        set.width,
        pixels,
        set.labels.clone(),
        set.class_names.clone(),
    )
}

/// Source taps and weights for one output coordinate under half-pixel
/// centers (`src = (dst + 0.5) * in / out - 0.5`, clamped to the edge).
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = libm::floor(src) as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize (half-pixel centers), rounding half up back to bytes.
pub fn resize(set: &LabeledImageSet, out_h: usize, out_w: usize) -> Result<LabeledImageSet> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "resize target {out_h}x{out_w}"
        )));
    }
    if out_h == set.height && out_w == set.width {
        return Ok(set.clone());
    }
    let ys = bilinear_taps(out_h, set.height);
    let xs = bilinear_taps(out_w, set.width);
    let mut pixels = Vec::with_capacity(set.len() * set.channels * out_h * out_w);
    for i in 0..set.len() {
        for plane in set.image(i).chunks_exact(set.height * set.width) {
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let p = |y: usize, x: usize| plane[y * set.width + x] as f64;
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    pixels.push(round_u8(top * (1.0 - fy) + bottom * fy));
                }
            }
        }
    }
    LabeledImageSet::new(
        set.channels,
        out_h,
        out_w,
        pixels,
        set.labels.clone(),
        set.class_names.clone(),
    )
}

/// Class names shared by CIFAR-10 and STL-10, as `(cifar, stl)` pairs.
/// CIFAR-10 `frog` and STL-10 `monkey` have no counterpart.
pub const CIFAR10_STL10_CLASS_MAP: [(&str, &str); 9] = [
    ("airplane", "airplane"),
    ("automobile", "car"),
    ("bird", "bird"),
    ("cat", "cat"),
    ("deer", "deer"),
    ("dog", "dog"),
    ("horse", "horse"),
    ("ship", "ship"),
    ("truck", "truck"),
];

/// Keeps only classes present on both sides of `mapping` (pairs of
/// `(name in a, name in b)`), relabelling both sets onto `0..K` ordered by the
/// sorted names of `a`. Both outputs carry `a`'s class names.
pub fn intersect_labels(
    a: &LabeledImageSet,
    b: &LabeledImageSet,
    mapping: &[(&str, &str)],
) -> Result<DomainPair> {
    let pos = |names: &[String], n: &str| names.iter().position(|c| c == n);
    let mut shared: Vec<(String, usize, usize)> = mapping
        .iter()
        .filter_map(|&(na, nb)| {
            Some((String::from(na), pos(&a.class_names, na)?, pos(&b.class_names, nb)?))
        })
        .collect();
    if shared.is_empty() {
        return Err(Error::InvalidArgument(
            "the two label sets share no classes".into(),
        ));
    }
    shared.sort_by(|x, y| x.0.cmp(&y.0));
    shared.dedup_by(|x, y| x.0 == y.0);
    let names: Vec<String> = shared.iter().map(|s| s.0.clone()).collect();
    let remap_a: BTreeMap<u8, u8> = shared
        .iter()
        .enumerate()
        .map(|(new, s)| (s.1 as u8, new as u8))
        .collect();
    let remap_b: BTreeMap<u8, u8> = shared
        .iter()
        .enumerate()
        .map(|(new, s)| (s.2 as u8, new as u8))
        .collect();
    let relabel = |set: &LabeledImageSet, remap: &BTreeMap<u8, u8>| -> Result<LabeledImageSet> {
        let keep: Vec<usize> = (0..set.len())
            .filter(|&i| remap.contains_key(&set.labels[i]))
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let sub = set.subset(&keep)?;
        let labels = sub.labels.iter().map(|l| remap[l]).collect();
        LabeledImageSet::new(
            sub.channels,
            sub.height,
            sub.width,
            sub.pixels,
            labels,
            names.clone(),
        )
    };
    Ok(DomainPair {
        source: relabel(a, &remap_a)?,
        target: relabel(b, &remap_b)?,
    })
}

/// Validation share and shuffle seed for a source split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub val_fraction: f32,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Stratified, seeded train/validation split. Each class contributes
/// `round(count * val_fraction)` samples to validation; both outputs keep the
/// original sample order.
pub fn split(set: &LabeledImageSet, spec: SplitSpec) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 0.5) {
        return Err(Error::InvalidArgument(alloc::format!(
            "val_fraction must lie in (0, 0.5), got {}",
            spec.val_fraction
        )));
    }
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); set.num_classes()];
    for (i, &l) in set.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = rng::seeded(spec.seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "class {class} has fewer than 2 samples"
            )));
        }
        members.shuffle(&mut rng);
        let n_val = libm::round(members.len() as f64 * spec.val_fraction as f64) as usize;
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    if val.is_empty() {
        return Err(Error::InvalidArgument(
            "validation split is empty; increase val_fraction or data".into(),
        ));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((set.subset(&train)?, set.subset(&val)?))
}

/// Class names `"0"` to `"9"`.
pub fn digit_class_names() -> Vec<String> {
    (0..10).map(|d| alloc::format!("{d}")).collect()
}
