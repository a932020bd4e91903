//! The augmentation pool and per-learner subset assignment.
//!
//! Images are `C x H x W` float planes in `[0, 1]`. Geometric transforms use
//! nearest-neighbour sampling and fill vacated pixels with 0.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// One augmentation kind with its sampling range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    HorizontalFlip,
    Rotation { max_degrees: f32 },
    Translate { max_pixels: u32 },
    Zoom { max_fraction: f32 },
    Brightness { max_delta: f32 },
    Contrast { max_factor: f32 },
    GaussianNoise { sigma: f32 },
}

/// A concrete draw of an augmentation's parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    HorizontalFlip,
    Rotate { degrees: f32 },
    Shift { dx: i32, dy: i32 },
    Zoom { scale: f32 },
    Brightness { delta: f32 },
    Contrast { factor: f32 },
    Noise { sigma: f32 },
}

fn in_range(v: f32, hi: f32) -> bool {
    v.is_finite() && v > 0.0 && v <= hi
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Augmentation::HorizontalFlip => true,
            Augmentation::Rotation { max_degrees } => in_range(max_degrees, 30.0),
            Augmentation::Translate { max_pixels } => (1..=4).contains(&max_pixels),
            Augmentation::Zoom { max_fraction } => in_range(max_fraction, 0.5),
            Augmentation::Brightness { max_delta } => in_range(max_delta, 0.3),
            Augmentation::Contrast { max_factor } => in_range(max_factor, 0.9),
            Augmentation::GaussianNoise { sigma } => in_range(sigma, 0.1),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!(
                "augmentation parameters out of range: {self:?}"
            )))
        }
    }

    /// Draws parameters uniformly from the configured range.
    pub fn sample(&self, rng: &mut Rng) -> Transform {
        let sym = |rng: &mut Rng, m: f32| rng.random_range(-m..=m);
        match *self {
            Augmentation::HorizontalFlip => Transform::HorizontalFlip,
            Augmentation::Rotation { max_degrees } => Transform::Rotate {
                degrees: sym(rng, max_degrees),
            },
            Augmentation::Translate { max_pixels } => {
                let m = max_pixels as i32;
                Transform::Shift {
                    dx: rng.random_range(-m..=m),
                    dy: rng.random_range(-m..=m),
                }
            }
            Augmentation::Zoom { max_fraction } => Transform::Zoom {
                scale: 1.0 + sym(rng, max_fraction),
            },
            Augmentation::Brightness { max_delta } => Transform::Brightness {
                delta: sym(rng, max_delta),
            },
            Augmentation::Contrast { max_factor } => Transform::Contrast {
                factor: 1.0 + sym(rng, max_factor),
            },
            Augmentation::GaussianNoise { sigma } => Transform::Noise { sigma },
        }
    }
}

/// Inverse-maps each output pixel through `src(x, y)` with nearest-neighbour lookup.
fn resample(plane: &mut [f32], h: usize, w: usize, src: impl Fn(f32, f32) -> (f32, f32)) {
    let original = plane.to_vec();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f32, y as f32);
            let (rx, ry) = (libm::roundf(sx), libm::roundf(sy));
            plane[y * w + x] = if rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h {
                original[ry as usize * w + rx as usize]
            } else {
                0.0
            };
        }
    }
}

impl Transform {
    /// Applies the transform in place to a `channels x h x w` image.
    pub fn apply_in_place(&self, image: &mut [f32], channels: usize, h: usize, w: usize, rng: &mut Rng) {
        debug_assert_eq!(image.len(), channels * h * w);
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        match *self {
            Transform::HorizontalFlip => {
                for row in image.chunks_exact_mut(w) {
                    row.reverse();
                }
            }
            Transform::Rotate { degrees } => {
                let (s, c) = libm::sincosf(degrees.to_radians());
                for plane in image.chunks_exact_mut(h * w) {
                    resample(plane, h, w, |x, y| {
                        let (dx, dy) = (x - cx, y - cy);
                        (c * dx + s * dy + cx, -s * dx + c * dy + cy)
                    });
                }
            }
            Transform::Shift { dx, dy } => {
                for plane in image.chunks_exact_mut(h * w) {
                    resample(plane, h, w, |x, y| (x - dx as f32, y - dy as f32));
                }
            }
            Transform::Zoom { scale } => {
                for plane in image.chunks_exact_mut(h * w) {
                    resample(plane, h, w, |x, y| ((x - cx) / scale + cx, (y - cy) / scale + cy));
                }
            }
            Transform::Brightness { delta } => {
                for v in image.iter_mut() {
                    *v += delta;
                }
            }
            Transform::Contrast { factor } => {
                for plane in image.chunks_exact_mut(h * w) {
                    let mean = plane.iter().sum::<f32>() / plane.len() as f32;
                    for v in plane.iter_mut() {
                        *v = (*v - mean) * factor + mean;
                    }
                }
            }
            Transform::Noise { sigma } => {
                for v in image.iter_mut() {
                    *v += sigma * rng::standard_normal(rng);
                }
            }
        }
        for v in image.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Samples and applies `aug` to a `C x H x W` image tensor.
pub fn apply(aug: &Augmentation, image: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let [c, h, w] = chw(image)?;
    let mut out = image.clone();
    let t = aug.sample(rng);
    t.apply_in_place(out.data_mut(), c, h, w, rng);
    Ok(out)
}

/// Applies an already-drawn transform to a `C x H x W` image tensor.
pub fn apply_transform(t: &Transform, image: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let [c, h, w] = chw(image)?;
    let mut out = image.clone();
    t.apply_in_place(out.data_mut(), c, h, w, rng);
    Ok(out)
}

fn chw(image: &Tensor) -> Result<[usize; 3]> {
    match *image.shape() {
        [c, h, w] => Ok([c, h, w]),
        ref s => Err(Error::Shape(alloc::format!("expected a CxHxW image, got {s:?}"))),
    }
}

/// Which family of images a pool is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Digits,
    Objects,
}

/// Standard pool. Digits leave out horizontal flips, which change a digit's identity.
pub fn default_pool(kind: DomainKind) -> Vec<Augmentation> {
    let mut pool = Vec::new();
    if kind == DomainKind::Objects {
        pool.push(Augmentation::HorizontalFlip);
    }
    pool.extend([
        Augmentation::Rotation { max_degrees: 15.0 },
        Augmentation::Translate { max_pixels: 2 },
        Augmentation::Zoom { max_fraction: 0.1 },
        Augmentation::Brightness { max_delta: 0.2 },
        Augmentation::Contrast { max_factor: 0.3 },
        Augmentation::GaussianNoise { sigma: 0.05 },
    ]);
    pool
}

/// A pool with one index subset per learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub pool: Vec<Augmentation>,
    /// Ascending pool indices, one list per learner; pairwise distinct, non-empty.
    pub per_model: Vec<Vec<usize>>,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn validate(&self) -> Result<()> {
        for a in &self.pool {
            a.validate()?;
        }
        let mut seen = BTreeSet::new();
        for subset in &self.per_model {
            if subset.is_empty() {
                return Err(Error::InvalidArgument("empty augmentation subset".into()));
            }
            if subset.iter().any(|&i| i >= self.pool.len()) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "subset {subset:?} indexes outside a pool of {}",
                    self.pool.len()
                )));
            }
            let set: BTreeSet<usize> = subset.iter().copied().collect();
            if !seen.insert(set) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "duplicate augmentation subset {subset:?}"
                )));
            }
        }
        Ok(())
    }

    /// The augmentations assigned to learner `model`.
    pub fn augmentations_for(&self, model: usize) -> Vec<Augmentation> {
        self.per_model[model].iter().map(|&i| self.pool[i]).collect()
    }
}

const MAX_POOL: usize = 24;
const ENUMERATE_LIMIT: u64 = 1 << 16;

fn mask_to_indices(mask: u64) -> Vec<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).collect()
}

/// Draws `n` distinct non-empty subsets of `pool` without replacement.
pub fn assign_subsets(pool: &[Augmentation], n: usize, seed: u64) -> Result<AugmentationPlan> {
    if pool.is_empty() || pool.len() > MAX_POOL {
        return Err(Error::InvalidArgument(alloc::format!(
            "pool size {} outside 1..={MAX_POOL}",
            pool.len()
        )));
    }
    for a in pool {
        a.validate()?;
    }
    let available = (1u64 << pool.len()) - 1;
    if n == 0 || n as u64 > available {
        return Err(Error::InvalidArgument(alloc::format!(
            "a pool of {} has {available} non-empty subsets, {n} requested",
            pool.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    let masks: Vec<u64> = if available <= ENUMERATE_LIMIT {
        let mut all: Vec<u64> = (1..=available).collect();
        let (chosen, _) = all.partial_shuffle(&mut rng, n);
        chosen.to_vec()
    } else {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let m = rng.random_range(1..=available);
            if seen.insert(m) {
                out.push(m);
            }
        }
        out
    };
    Ok(AugmentationPlan {
        pool: pool.to_vec(),
        per_model: masks.into_iter().map(mask_to_indices).collect(),
        seed,
    })
}

/// Every pool index: the subset used by the meta-learner and the wide CNN.
pub fn full_plan(pool: &[Augmentation]) -> Vec<usize> {
    (0..pool.len()).collect()
}

/// Stochastic per-sample policy: each augmentation fires independently with
/// probability `p`, in pool order.
pub fn augment_sample(
    augs: &[Augmentation],
    p: f64,
    image: &mut [f32],
    shape: [usize; 3],
    rng: &mut Rng,
) {
    for aug in augs {
        if rng.random_bool(p) {
            let t = aug.sample(rng);
            t.apply_in_place(image, shape[0], shape[1], shape[2], rng);
        }
    }
}
