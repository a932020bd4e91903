//! ReLU, softmax and the fused softmax + cross-entropy loss.

use crate::error::{Error, Result};
use crate::tensor::{expect_ndim, Tensor};

/// Smallest probability fed to `ln` inside the cross-entropy loss.
pub const LOG_CLAMP: f32 = 1e-12;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Passes the gradient where `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    if !input.same_shape(d_output) {
        return Err(Error::Shape(alloc::format!(
            "relu input {:?} vs d_output {:?}",
            input.shape(),
            d_output.shape()
        )));
    }
    let mut d = d_output.clone();
    for (g, x) in d.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(d)
}

/// Max-shifted softmax over one row, in place.
pub(crate) fn softmax_row(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Row-wise softmax of an `N x K` logit matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    expect_ndim(logits, 2, "softmax logits")?;
    let k = logits.shape()[1];
    if k < 2 {
        return Err(Error::Shape(alloc::format!("softmax needs K >= 2, got {k}")));
    }
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in softmax logits".into()));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        softmax_row(row);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` under `probs`, and the gradient
/// with respect to the logits that produced `probs`: `(probs - onehot) / N`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    expect_ndim(probs, 2, "cross-entropy probs")?;
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(alloc::format!(
            "{} labels for {n} probability rows",
            labels.len()
        )));
    }
    let mut grad = probs.clone();
    let inv_n = 1.0 / n as f32;
    let mut loss = 0.0f32;
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        loss -= libm::logf(row[label].max(LOG_CLAMP));
        row[label] -= 1.0;
        for g in row.iter_mut() {
            *g *= inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
