//! Mini-batch SGD training with on-the-fly augmentation and best-validation selection.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{argmax, Network};
use super::params::ModelParams;
use super::spec::CnnSpec;
use crate::augment::{augment_sample, Augmentation};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ops::{self, SgdConfig};
use crate::rng;
use crate::tensor::Tensor;

/// Optimisation settings for one learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Drives shuffling and augmentation draws.
    pub seed: u64,
    /// Chance that each assigned augmentation fires on a sample.
    pub augment_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            augment_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        // lr = 0 is accepted so that a frozen run can be checked against its initialisation
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("bad learning rate {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.augment_prob) {
            return Err(Error::InvalidArgument("augment_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f32,
    /// Running accuracy over the epoch's augmented mini-batches.
    pub train_accuracy: f32,
    pub val_accuracy: Option<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (0-based) whose parameters were returned.
    pub selected_epoch: usize,
}

/// Builds a float batch, applying `augs` per sample when non-empty.
pub fn make_batch(
    set: &LabeledImageSet,
    indices: &[usize],
    augs: &[Augmentation],
    augment_prob: f64,
    rng: &mut rng::Rng,
) -> Result<Tensor> {
    let mut batch = set.batch_tensor(indices)?;
    if !augs.is_empty() && augment_prob > 0.0 {
        let shape = set.image_shape();
        for i in 0..indices.len() {
            augment_sample(augs, augment_prob, batch.row_mut(i), shape, rng);
        }
    }
    Ok(batch)
}

/// Trains `params` on `train_set`, returning the parameters of the epoch with
/// the best validation accuracy (the last epoch if there is no validation set).
pub fn train(
    spec: &CnnSpec,
    params: ModelParams,
    train_set: &LabeledImageSet,
    val_set: Option<&LabeledImageSet>,
    config: &TrainConfig,
    augmentations: &[Augmentation],
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_set.image_shape() != spec.input_shape {
        return Err(Error::Shape(alloc::format!(
            "training images {:?} do not match network input {:?}",
            train_set.image_shape(),
            spec.input_shape
        )));
    }
    for set in core::iter::once(train_set).chain(val_set) {
        if let Some(&l) = set.labels().iter().find(|&&l| l as usize >= spec.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                classes: spec.num_classes,
            });
        }
    }
    for a in augmentations {
        a.validate()?;
    }
    Network::new(spec, &params)?;

    let mut rng = rng::seeded(config.seed);
    let mut current = params;
    let mut velocity: Vec<Tensor> = current.tensors().map(|t| Tensor::zeros(t.shape())).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f32, usize, ModelParams)> = None;
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = make_batch(train_set, chunk, augmentations, config.augment_prob, &mut rng)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels()[i] as usize).collect();
            let net = Network::new(spec, &current)?;
            let (logits, trace) = net.forward_traced(&x)?;
            let probs = ops::softmax(&logits).map_err(|_| Error::Diverged {
                epoch,
                batch: b,
                loss: f32::NAN,
            })?;
            let (loss, d_logits) = ops::cross_entropy(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += (0..chunk.len())
                .filter(|&i| argmax(probs.row(i)) == labels[i])
                .count();
            let grads = net.backward(&trace, d_logits)?;
            let mut tensors = current.tensors_mut();
            ops::sgd_step(&mut tensors, &grads, &mut velocity, config.sgd())?;
            current.replace(tensors);
        }
        let val_accuracy = match val_set {
            Some(v) if !v.is_empty() => Some(super::network::evaluate(spec, &current, v)?),
            _ => None,
        };
        records.push(EpochRecord {
            train_loss: (loss_sum / train_set.len() as f64) as f32,
            train_accuracy: correct as f32 / train_set.len() as f32,
            val_accuracy,
        });
        let score = val_accuracy.unwrap_or(f32::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((s, _, _)) => val_accuracy.is_none() || score > *s,
        };
        if improves {
            best = Some((score, epoch, current.clone()));
        }
    }
    let (_, selected_epoch, params) = best.expect("at least one epoch ran");
    Ok((
        params,
        TrainHistory {
            epochs: records,
            selected_epoch,
        },
    ))
}
