//! Max pooling with a recorded winner map.

use alloc::vec::Vec;

use super::conv::output_extent;
use crate::error::{Error, Result};
use crate::tensor::{expect_ndim, Tensor};

/// Flat input offsets of each pooled cell's winner, plus the input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndex {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub winners: Vec<usize>,
}

/// Max over each `window x window` patch. Ties go to the first element in
/// row-major scan order of the window.
pub fn maxpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndex)> {
    expect_ndim(input, 4, "maxpool input")?;
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (Some(oh), Some(ow)) = (
        output_extent(h, window, stride, 0),
        output_extent(w, window, stride, 0),
    ) else {
        return Err(Error::Shape(alloc::format!(
            "maxpool window {window} stride {stride} does not tile {h}x{w}"
        )));
    };
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut winners = Vec::with_capacity(n * c * oh * ow);
    let src = input.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                let mut best_val = src[best];
                for u in 0..window {
                    let row = base + (i * stride + u) * w + j * stride;
                    for v in 0..window {
                        let val = src[row + v];
                        if val > best_val {
                            best_val = val;
                            best = row + v;
                        }
                    }
                }
                dst[o] = best_val;
                winners.push(best);
                o += 1;
            }
        }
    }
    let index = PoolIndex {
        input_shape: s.to_vec(),
        output_shape: out.shape().to_vec(),
        winners,
    };
    Ok((out, index))
}

/// Routes each upstream gradient to its recorded winner.
pub fn maxpool2d_backward(index: &PoolIndex, d_output: &Tensor) -> Result<Tensor> {
    if d_output.shape() != index.output_shape.as_slice() {
        return Err(Error::Shape(alloc::format!(
            "d_output shape {:?} does not match pooled shape {:?}",
            d_output.shape(),
            index.output_shape
        )));
    }
    let mut d_input = Tensor::zeros(&index.input_shape);
    let dst = d_input.data_mut();
    for (&w, &g) in index.winners.iter().zip(d_output.data()) {
        dst[w] += g;
    }
    Ok(d_input)
}
