//! Fully-connected affine layer.

use alloc::vec::Vec;

use super::gemm::{gemm, MatRef};
use crate::error::{Error, Result};
use crate::tensor::{expect_ndim, LayerGrads, Tensor};

fn check(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    expect_ndim(input, 2, "dense input")?;
    expect_ndim(weights, 2, "dense weights")?;
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (wf, u) = (weights.shape()[0], weights.shape()[1]);
    if f != wf {
        return Err(Error::Shape(alloc::format!(
            "dense input has {f} features, weights expect {wf}"
        )));
    }
    Ok((n, f, u))
}

/// `input (N x F) * weights (F x U) + bias (U)`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, u) = check(input, weights)?;
    if bias.len() != u {
        return Err(Error::Shape(alloc::format!(
            "bias has {} entries for {u} units",
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[n, u]);
    for row in out.data_mut().chunks_exact_mut(u) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        MatRef::row_major(input.data(), n, f),
        MatRef::row_major(weights.data(), f, u),
        1.0,
        out.data_mut(),
    );
    Ok(out)
}

/// Gradients with respect to input, weights and bias.
pub fn dense_backward(input: &Tensor, weights: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let (n, f, u) = check(input, weights)?;
    if d_output.shape() != [n, u] {
        return Err(Error::Shape(alloc::format!(
            "d_output shape {:?}, expected [{n}, {u}]",
            d_output.shape()
        )));
    }
    let x = MatRef::row_major(input.data(), n, f);
    let w = MatRef::row_major(weights.data(), f, u);
    let dy = MatRef::row_major(d_output.data(), n, u);

    let mut d_input = Tensor::zeros(&[n, f]);
    gemm(dy, w.t(), 0.0, d_input.data_mut());
    let mut d_weights = Tensor::zeros(&[f, u]);
    gemm(x.t(), dy, 0.0, d_weights.data_mut());
    let mut d_bias = Tensor::zeros(&[u]);
    for row in d_output.data().chunks_exact(u) {
        for (b, g) in d_bias.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LayerGrads {
        d_input,
        d_params: Vec::from([d_weights, d_bias]),
    })
}
