//! Forward and backward passes through a resolved architecture.

use alloc::vec::Vec;

use super::params::ModelParams;
use super::spec::{CnnSpec, Resolved, ResolvedLayer};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::ops::{self, PoolIndex};
use crate::tensor::Tensor;

/// Rows per forward chunk during inference.
const INFER_CHUNK: usize = 256;

/// A spec bound to its parameters, with the shape chain already resolved.
pub struct Network<'a> {
    pub(crate) spec: &'a CnnSpec,
    pub(crate) resolved: Resolved,
    pub(crate) params: &'a ModelParams,
}

/// Layer inputs retained for the backward pass.
pub(crate) struct Trace {
    inputs: Vec<Tensor>,
    pools: Vec<Option<PoolIndex>>,
}

impl<'a> Network<'a> {
    pub fn new(spec: &'a CnnSpec, params: &'a ModelParams) -> Result<Self> {
        let resolved = spec.resolve()?;
        params.check_against(spec)?;
        Ok(Self {
            spec,
            resolved,
            params,
        })
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 || s[1..] != self.spec.input_shape {
            return Err(Error::Shape(alloc::format!(
                "input {:?} does not match network input {:?}",
                s,
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn step(
        &self,
        layer: &ResolvedLayer,
        param_idx: &mut usize,
        x: &Tensor,
    ) -> Result<(Tensor, Option<PoolIndex>)> {
        let p = &self.params.entries;
        Ok(match *layer {
            ResolvedLayer::Conv {
                stride, padding, ..
            } => {
                let y = ops::conv2d_forward(
                    x,
                    &p[*param_idx].tensor,
                    &p[*param_idx + 1].tensor,
                    stride,
                    padding,
                )?;
                *param_idx += 2;
                (y, None)
            }
            ResolvedLayer::Relu => (ops::relu_forward(x), None),
            ResolvedLayer::MaxPool { window, stride } => {
                let (y, idx) = ops::maxpool2d_forward(x, window, stride)?;
                (y, Some(idx))
            }
            ResolvedLayer::Flatten => {
                let n = x.rows();
                let f = x.row_len();
                (x.clone().reshape(&[n, f])?, None)
            }
            ResolvedLayer::Dense { .. } => {
                let y = ops::dense_forward(x, &p[*param_idx].tensor, &p[*param_idx + 1].tensor)?;
                *param_idx += 2;
                (y, None)
            }
        })
    }

    /// Logits for an `N x C x H x W` batch.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        let mut pi = 0;
        for layer in &self.resolved.layers {
            x = self.step(layer, &mut pi, &x)?.0;
        }
        Ok(x)
    }

    pub(crate) fn forward_traced(&self, input: &Tensor) -> Result<(Tensor, Trace)> {
        self.check_input(input)?;
        let n_layers = self.resolved.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pools = Vec::with_capacity(n_layers);
        let mut x = input.clone();
        let mut pi = 0;
        for layer in &self.resolved.layers {
            let (y, idx) = self.step(layer, &mut pi, &x)?;
            inputs.push(core::mem::replace(&mut x, y));
            pools.push(idx);
        }
        Ok((x, Trace { inputs, pools }))
    }

    /// Parameter gradients for upstream `d_logits`, in parameter order.
    pub(crate) fn backward(&self, trace: &Trace, d_logits: Tensor) -> Result<Vec<Tensor>> {
        let p = &self.params.entries;
        let mut grads: Vec<Option<Tensor>> = (0..p.len()).map(|_| None).collect();
        let mut pi = p.len();
        let mut d = d_logits;
        for (i, layer) in self.resolved.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            d = match *layer {
                ResolvedLayer::Conv {
                    stride, padding, ..
                } => {
                    pi -= 2;
                    let g = ops::conv2d_backward(x, &p[pi].tensor, stride, padding, &d)?;
                    let mut dp = g.d_params.into_iter();
                    grads[pi] = dp.next();
                    grads[pi + 1] = dp.next();
                    g.d_input
                }
                ResolvedLayer::Relu => ops::relu_backward(x, &d)?,
                ResolvedLayer::MaxPool { .. } => {
                    let idx = trace.pools[i]
                        .as_ref()
                        .ok_or_else(|| Error::Shape("missing pool index".into()))?;
                    ops::maxpool2d_backward(idx, &d)?
                }
                ResolvedLayer::Flatten => d.reshape(x.shape())?,
                ResolvedLayer::Dense { .. } => {
                    pi -= 2;
                    let g = ops::dense_backward(x, &p[pi].tensor, &d)?;
                    let mut dp = g.d_params.into_iter();
                    grads[pi] = dp.next();
                    grads[pi + 1] = dp.next();
                    g.d_input
                }
            };
        }
        grads
            .into_iter()
            .map(|g| g.ok_or_else(|| Error::Shape("parameter without gradient".into())))
            .collect()
    }

    /// Softmax probabilities, computed in fixed-size chunks.
    pub fn predict_proba(&self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let n = images.rows();
        let k = self.spec.num_classes;
        let mut out = Vec::with_capacity(n * k);
        let mut start = 0;
        while start < n {
            let end = (start + INFER_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let chunk = images.select_rows(&idx);
            let probs = ops::softmax(&self.logits(&chunk)?)?;
            out.extend_from_slice(probs.data());
            start = end;
        }
        Tensor::from_vec(&[n, k], out)
    }

    /// Class probabilities for every image of a labeled set.
    pub fn predict_set(&self, set: &LabeledImageSet) -> Result<Tensor> {
        let n = set.len();
        let k = self.spec.num_classes;
        let mut out = Vec::with_capacity(n * k);
        let mut start = 0;
        while start < n {
            let end = (start + INFER_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let chunk = set.batch_tensor(&idx)?;
            let probs = ops::softmax(&self.logits(&chunk)?)?;
            out.extend_from_slice(probs.data());
            start = end;
        }
        Tensor::from_vec(&[n, k], out)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(probs: &Tensor, labels: &[u8]) -> Result<f32> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if probs.rows() != labels.len() {
        return Err(Error::Shape(alloc::format!(
            "{} prediction rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let correct = (0..labels.len())
        .filter(|&i| argmax(probs.row(i)) == labels[i] as usize)
        .count();
    Ok(correct as f32 / labels.len() as f32)
}

/// Softmax outputs of `spec` with `params` on an image batch.
pub fn predict_proba(spec: &CnnSpec, params: &ModelParams, images: &Tensor) -> Result<Tensor> {
    Network::new(spec, params)?.predict_proba(images)
}

/// Argmax accuracy on a labeled set.
pub fn evaluate(spec: &CnnSpec, params: &ModelParams, dataset: &LabeledImageSet) -> Result<f32> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let probs = Network::new(spec, params)?.predict_set(dataset)?;
    accuracy(&probs, dataset.labels())
}
