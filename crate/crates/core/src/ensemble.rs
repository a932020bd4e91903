//! Fusion of base-learner probability outputs.
//!
//! Four strategies: plain averaging of CNN outputs, a stacked affine
//! meta-learner, a stacked one-hidden-layer MLP meta-learner, and averaging of
//! the three classical learners.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, SgdConfig};
use crate::rng;
use crate::tensor::Tensor;

/// Row sums of incoming probability tables must be within this of 1.
pub const ROW_SUM_TOLERANCE: f32 = 1e-4;

/// `N_models` tables of `N_samples x K` probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseOutputs {
    probs: Vec<Tensor>,
    model_ids: Vec<usize>,
}

impl BaseOutputs {
    pub fn new(probs: Vec<Tensor>, model_ids: Vec<usize>) -> Result<Self> {
        let Some(first) = probs.first() else {
            return Err(Error::InvalidArgument("no model outputs".into()));
        };
        if probs.len() != model_ids.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} output tables for {} model ids",
                probs.len(),
                model_ids.len()
            )));
        }
        let mut ids = model_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != model_ids.len() {
            return Err(Error::InvalidArgument("duplicate model ids".into()));
        }
        for p in &probs {
            if p.ndim() != 2 || p.shape() != first.shape() {
                return Err(Error::Shape(alloc::format!(
                    "output table {:?} differs from {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            for r in 0..p.rows() {
                let row = p.row(r);
                let sum: f32 = row.iter().sum();
                if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "row {r} is not a probability distribution (sum {sum})"
                    )));
                }
            }
        }
        Ok(Self { probs, model_ids })
    }

    /// Ids `0..n` in order.
    pub fn from_tables(probs: Vec<Tensor>) -> Result<Self> {
        let ids = (0..probs.len()).collect();
        Self::new(probs, ids)
    }

    pub fn num_models(&self) -> usize {
        self.probs.len()
    }

    pub fn num_samples(&self) -> usize {
        self.probs[0].rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs[0].shape()[1]
    }

    pub fn model_ids(&self) -> &[usize] {
        &self.model_ids
    }

    pub fn table(&self, slot: usize) -> &Tensor {
        &self.probs[slot]
    }

    /// Tables ordered by ascending model id.
    fn ordered(&self) -> Vec<&Tensor> {
        let mut slots: Vec<usize> = (0..self.probs.len()).collect();
        slots.sort_by_key(|&s| self.model_ids[s]);
        slots.into_iter().map(|s| &self.probs[s]).collect()
    }

    /// `N_samples x (N_models * K)` meta-learner input: models by ascending id,
    /// classes contiguous within each model.
    pub fn stacked(&self) -> Tensor {
        let (n, k) = (self.num_samples(), self.num_classes());
        let tables = self.ordered();
        let mut data = Vec::with_capacity(n * k * tables.len());
        for i in 0..n {
            for t in &tables {
                data.extend_from_slice(t.row(i));
            }
        }
        Tensor::from_vec(&[n, k * tables.len()], data).expect("stacked shape is consistent")
    }
}

/// Mean of a handful of values, independent of their order: sorted, summed in f64.
fn order_free_mean(values: &mut [f32]) -> f32 {
    values.sort_by(|a, b| a.total_cmp(b));
    let sum: f64 = values.iter().map(|&v| v as f64).sum();
    (sum / values.len() as f64) as f32
}

/// Arithmetic mean over models, per sample and class.
///
/// Exactly invariant to model order and idempotent on identical members.
pub fn ensemble_average(outputs: &BaseOutputs) -> Tensor {
    let (n, k) = (outputs.num_samples(), outputs.num_classes());
    let mut out = Tensor::zeros(&[n, k]);
    let mut cell = Vec::with_capacity(outputs.num_models());
    for (j, o) in out.data_mut().iter_mut().enumerate() {
        cell.clear();
        cell.extend(outputs.probs.iter().map(|p| p.data()[j]));
        *o = order_free_mean(&mut cell);
    }
    out
}

/// Unweighted mean of the random forest, SVM and logistic regression outputs.
pub fn ensemble_traditional(rf: &Tensor, svm: &Tensor, lr: &Tensor) -> Result<Tensor> {
    if rf.ndim() != 2 || !rf.same_shape(svm) || !rf.same_shape(lr) {
        return Err(Error::Shape(alloc::format!(
            "member shapes {:?}, {:?}, {:?}",
            rf.shape(),
            svm.shape(),
            lr.shape()
        )));
    }
    let data = rf
        .data()
        .iter()
        .zip(svm.data())
        .zip(lr.data())
        .map(|((&a, &b), &c)| order_free_mean(&mut [a, b, c]))
        .collect();
    Tensor::from_vec(rf.shape(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaKind {
    Linear,
    Mlp { hidden: usize },
}

/// Stacked combiner over concatenated base probabilities.
///
/// Parameters: `[W (NK x K), b]` for the linear kind,
/// `[W1 (NK x H), b1, W2 (H x K), b2]` for the MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub kind: MetaKind,
    pub num_models: usize,
    pub num_classes: usize,
    pub params: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Default hidden width of the MLP combiner.
pub const DEFAULT_META_HIDDEN: usize = 64;

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut rng::Rng) -> Tensor {
    let bound = libm::sqrtf(6.0 / fan_in as f32);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

impl MetaModel {
    /// He-uniform weights, zero biases.
    pub fn init(kind: MetaKind, num_models: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_models == 0 || num_classes < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "meta model needs >= 1 model and >= 2 classes, got {num_models}, {num_classes}"
            )));
        }
        let width = num_models * num_classes;
        let mut r = rng::seeded(seed);
        let params = match kind {
            MetaKind::Linear => alloc::vec![
                he_uniform(&[width, num_classes], width, &mut r),
                Tensor::zeros(&[num_classes]),
            ],
            MetaKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument("hidden width must be positive".into()));
                }
                alloc::vec![
                    he_uniform(&[width, hidden], width, &mut r),
                    Tensor::zeros(&[hidden]),
                    he_uniform(&[hidden, num_classes], hidden, &mut r),
                    Tensor::zeros(&[num_classes]),
                ]
            }
        };
        Ok(Self {
            kind,
            num_models,
            num_classes,
            params,
        })
    }

    /// Linear combiner whose logits are `gain * p_slot`, i.e. a copy of one
    /// base model's vote. `slot` counts models in ascending id order.
    pub fn replicating(slot: usize, num_models: usize, num_classes: usize, gain: f32) -> Result<Self> {
        if slot >= num_models {
            return Err(Error::InvalidArgument(alloc::format!(
                "slot {slot} out of range for {num_models} models"
            )));
        }
        let width = num_models * num_classes;
        let mut w = Tensor::zeros(&[width, num_classes]);
        for c in 0..num_classes {
            w.data_mut()[(slot * num_classes + c) * num_classes + c] = gain;
        }
        Ok(Self {
            kind: MetaKind::Linear,
            num_models,
            num_classes,
            params: alloc::vec![w, Tensor::zeros(&[num_classes])],
        })
    }

    pub fn input_width(&self) -> usize {
        self.num_models * self.num_classes
    }

    fn logits_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match self.kind {
            MetaKind::Linear => {
                let z = ops::dense_forward(x, &self.params[0], &self.params[1])?;
                Ok((z, alloc::vec![x.clone()]))
            }
            MetaKind::Mlp { .. } => {
                let h_pre = ops::dense_forward(x, &self.params[0], &self.params[1])?;
                let h = ops::relu_forward(&h_pre);
                let z = ops::dense_forward(&h, &self.params[2], &self.params[3])?;
                Ok((z, alloc::vec![x.clone(), h_pre, h]))
            }
        }
    }

    fn grads(&self, trace: &[Tensor], d_logits: &Tensor) -> Result<Vec<Tensor>> {
        match self.kind {
            MetaKind::Linear => Ok(ops::dense_backward(&trace[0], &self.params[0], d_logits)?.d_params),
            MetaKind::Mlp { .. } => {
                let top = ops::dense_backward(&trace[2], &self.params[2], d_logits)?;
                let d_pre = ops::relu_backward(&trace[1], &top.d_input)?;
                let bottom = ops::dense_backward(&trace[0], &self.params[0], &d_pre)?;
                let mut g = bottom.d_params;
                g.extend(top.d_params);
                Ok(g)
            }
        }
    }

    /// Softmax outputs for an already stacked `N x (N_models * K)` input.
    pub fn predict_stacked(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 2 || x.row_len() != self.input_width() {
            return Err(Error::Shape(alloc::format!(
                "meta model expects width {}, got {:?}",
                self.input_width(),
                x.shape()
            )));
        }
        ops::softmax(&self.logits_traced(x)?.0)
    }
}

fn train_meta(
    kind: MetaKind,
    outputs: &BaseOutputs,
    labels: &[u8],
    config: &MetaConfig,
) -> Result<MetaModel> {
    if labels.len() != outputs.num_samples() {
        return Err(Error::Shape(alloc::format!(
            "{} labels for {} samples",
            labels.len(),
            outputs.num_samples()
        )));
    }
    let k = outputs.num_classes();
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::LabelOutOfRange {
            label: l as usize,
            classes: k,
        });
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut model = MetaModel::init(kind, outputs.num_models(), k, config.seed)?;
    let x = outputs.stacked();
    let sgd = SgdConfig {
        lr: config.lr,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    };
    let mut velocity: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut rng = rng::seeded(rng::derive_seed(config.seed, 1));
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i] as usize).collect();
            let (logits, trace) = model.logits_traced(&xb)?;
            let probs = ops::softmax(&logits).map_err(|_| Error::Diverged {
                epoch,
                batch: b,
                loss: f32::NAN,
            })?;
            let (loss, d_logits) = ops::cross_entropy(&probs, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            let grads = model.grads(&trace, &d_logits)?;
            ops::sgd_step(&mut model.params, &grads, &mut velocity, sgd)?;
        }
    }
    Ok(model)
}

/// Affine layer + softmax over stacked base probabilities (cross-entropy SGD).
pub fn train_meta_linear(outputs: &BaseOutputs, labels: &[u8], config: &MetaConfig) -> Result<MetaModel> {
    train_meta(MetaKind::Linear, outputs, labels, config)
}

/// One rectified hidden layer of `hidden` units, then a softmax head.
pub fn train_meta_mlp(
    outputs: &BaseOutputs,
    labels: &[u8],
    hidden: usize,
    config: &MetaConfig,
) -> Result<MetaModel> {
    train_meta(MetaKind::Mlp { hidden }, outputs, labels, config)
}

/// Fused probabilities from a trained combiner.
pub fn meta_predict(meta: &MetaModel, outputs: &BaseOutputs) -> Result<Tensor> {
    if outputs.num_models() != meta.num_models || outputs.num_classes() != meta.num_classes {
        return Err(Error::Shape(alloc::format!(
            "meta model built for {} models x {} classes, got {} x {}",
            meta.num_models,
            meta.num_classes,
            outputs.num_models(),
            outputs.num_classes()
        )));
    }
    meta.predict_stacked(&outputs.stacked())
}
