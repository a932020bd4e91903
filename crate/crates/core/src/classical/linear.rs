//! One-vs-rest linear SVM and multinomial logistic regression on raw features.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tree::check_xy;
use crate::error::{Error, Result};
use crate::ops::gemm::{gemm, MatRef};
use crate::ops::softmax_row;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    Svm,
    Logistic,
}

/// `scores = x * weights^T + bias`, with `weights` stored `K x F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub epochs: usize,
    pub lr: f32,
    /// L2 strength; the penalty is `reg / 2 * ||W||^2`.
    pub reg: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
            reg: 1e-4,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl LinearModel {
    pub fn zeros(kind: LinearKind, num_classes: usize, num_features: usize) -> Self {
        Self {
            kind,
            weights: Tensor::zeros(&[num_classes, num_features]),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn num_features(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Raw decision scores, `N x K`.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        let (k, f) = (self.num_classes(), self.num_features());
        if x.ndim() != 2 || x.row_len() != f {
            return Err(Error::Shape(alloc::format!(
                "model expects N x {f}, got {:?}",
                x.shape()
            )));
        }
        let n = x.rows();
        let mut out = Tensor::zeros(&[n, k]);
        for row in out.data_mut().chunks_exact_mut(k) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            MatRef::row_major(x.data(), n, f),
            MatRef::row_major(self.weights.data(), k, f).t(),
            1.0,
            out.data_mut(),
        );
        Ok(out)
    }
}

/// Loss value and gradients of a linear objective.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads {
    pub loss: f32,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

fn l2(model: &LinearModel, reg: f32) -> f32 {
    0.5 * reg * model.weights.data().iter().map(|w| w * w).sum::<f32>()
}

/// Mean one-vs-rest hinge loss `sum_k max(0, 1 - t_k s_k)` with `t_k = +1` for
/// the true class and `-1` otherwise, plus the L2 penalty; gradients are the
/// subgradient (0 at the kink).
pub fn svm_objective(model: &LinearModel, x: &Tensor, y: &[u8], reg: f32) -> Result<LinearGrads> {
    let k = model.num_classes();
    check_xy(x, y, k)?;
    let scores = model.scores(x)?;
    let n = y.len();
    let inv_n = 1.0 / n as f32;
    let mut d_scores = Tensor::zeros(&[n, k]);
    let mut loss = 0.0f32;
    for i in 0..n {
        let s = scores.row(i);
        let ds = d_scores.row_mut(i);
        for c in 0..k {
            let t = if c == y[i] as usize { 1.0 } else { -1.0 };
            let margin = 1.0 - t * s[c];
            if margin > 0.0 {
                loss += margin;
                ds[c] = -t * inv_n;
            }
        }
    }
    finish(model, x, d_scores, loss * inv_n + l2(model, reg), reg)
}

/// Mean softmax cross-entropy plus the L2 penalty.
pub fn logistic_objective(model: &LinearModel, x: &Tensor, y: &[u8], reg: f32) -> Result<LinearGrads> {
    let k = model.num_classes();
    check_xy(x, y, k)?;
    let mut probs = model.scores(x)?;
    let n = y.len();
    let inv_n = 1.0 / n as f32;
    let mut loss = 0.0f32;
    for i in 0..n {
        let row = probs.row_mut(i);
        softmax_row(row);
        let label = y[i] as usize;
        loss -= libm::logf(row[label].max(crate::ops::LOG_CLAMP));
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    finish(model, x, probs, loss * inv_n + l2(model, reg), reg)
}

fn finish(model: &LinearModel, x: &Tensor, d_scores: Tensor, loss: f32, reg: f32) -> Result<LinearGrads> {
    let (k, f, n) = (model.num_classes(), model.num_features(), x.rows());
    let mut d_weights = model.weights.clone();
    for w in d_weights.data_mut() {
        *w *= reg;
    }
    gemm(
        MatRef::row_major(d_scores.data(), n, k).t(),
        MatRef::row_major(x.data(), n, f),
        1.0,
        d_weights.data_mut(),
    );
    let mut d_bias = Tensor::zeros(&[k]);
    for row in d_scores.data().chunks_exact(k) {
        for (b, g) in d_bias.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        loss,
        d_weights,
        d_bias,
    })
}

fn train_linear(
    kind: LinearKind,
    x: &Tensor,
    y: &[u8],
    num_classes: usize,
    config: &LinearConfig,
) -> Result<LinearModel> {
    check_xy(x, y, num_classes)?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut model = LinearModel::zeros(kind, num_classes, x.row_len());
    let mut rng = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let g = match kind {
                LinearKind::Svm => svm_objective(&model, &xb, &yb, config.reg)?,
                LinearKind::Logistic => logistic_objective(&model, &xb, &yb, config.reg)?,
            };
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: 0,
                    loss: g.loss,
                });
            }
            for (w, d) in model.weights.data_mut().iter_mut().zip(g.d_weights.data()) {
                *w -= config.lr * d;
            }
            for (b, d) in model.bias.data_mut().iter_mut().zip(g.d_bias.data()) {
                *b -= config.lr * d;
            }
        }
    }
    Ok(model)
}

/// One-vs-rest L2-regularised hinge loss, seeded mini-batch SGD from zero weights.
pub fn train_linear_svm(x: &Tensor, y: &[u8], num_classes: usize, config: &LinearConfig) -> Result<LinearModel> {
    train_linear(LinearKind::Svm, x, y, num_classes, config)
}

/// Multinomial softmax regression, seeded mini-batch SGD from zero weights.
pub fn train_logistic_regression(
    x: &Tensor,
    y: &[u8],
    num_classes: usize,
    config: &LinearConfig,
) -> Result<LinearModel> {
    train_linear(LinearKind::Logistic, x, y, num_classes, config)
}

/// Softmax over decision scores for either kind.
pub fn linear_predict_proba(model: &LinearModel, x: &Tensor) -> Result<Tensor> {
    let mut s = model.scores(x)?;
    let k = model.num_classes();
    for row in s.data_mut().chunks_exact_mut(k) {
        softmax_row(row);
    }
    Ok(s)
}
