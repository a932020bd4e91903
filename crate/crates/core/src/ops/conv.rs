//! 2-D cross-correlation over NCHW batches, lowered to GEMM via im2col.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, MatRef};
use crate::error::{Error, Result};
use crate::tensor::{expect_ndim, LayerGrads, Tensor};

/// Output spatial extent of a window sweep, or `None` if it is not a positive integer.
pub fn output_extent(input: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || window == 0 {
        return None;
    }
    let padded = input + 2 * padding;
    if padded < window || !(padded - window).is_multiple_of(stride) {
        return None;
    }
    Some((padded - window) / stride + 1)
}

struct Geometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn new(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        expect_ndim(input, 4, "conv2d input")?;
        expect_ndim(kernels, 4, "conv2d kernels")?;
        let [batch, channels, height, width] = [
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        ];
        let [out_channels, k_channels, kh, kw] = [
            kernels.shape()[0],
            kernels.shape()[1],
            kernels.shape()[2],
            kernels.shape()[3],
        ];
        if k_channels != channels {
            return Err(Error::Shape(alloc::format!(
                "kernel expects {k_channels} input channels, input has {channels}"
            )));
        }
        if kh != kw {
            return Err(Error::Shape(alloc::format!("non-square kernel {kh}x{kw}")));
        }
        let out_h = output_extent(height, kh, stride, padding);
        let out_w = output_extent(width, kw, stride, padding);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::Shape(alloc::format!(
                "non-integral conv output for {height}x{width}, k={kh}, stride={stride}, pad={padding}"
            )));
        };
        Ok(Self {
            batch,
            channels,
            height,
            width,
            out_channels,
            kernel: kh,
            out_h,
            out_w,
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one sample into a `patch_len x positions` matrix.
    fn im2col(&self, sample: &[f32], col: &mut [f32]) {
        let k = self.kernel;
        let p = self.positions();
        for c in 0..self.channels {
            let plane = &sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for u in 0..k {
                for v in 0..k {
                    let row = (c * k + u) * k + v;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for i in 0..self.out_h {
                        let y = (i * self.stride + u) as isize - self.padding as isize;
                        let dst_row = &mut dst[i * self.out_w..(i + 1) * self.out_w];
                        if y < 0 || y >= self.height as isize {
                            dst_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for (j, d) in dst_row.iter_mut().enumerate() {
                            let x = (j * self.stride + v) as isize - self.padding as isize;
                            *d = if x < 0 || x >= self.width as isize {
                                0.0
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a `patch_len x positions` matrix back onto one sample.
    fn col2im(&self, col: &[f32], sample: &mut [f32]) {
        let k = self.kernel;
        let p = self.positions();
        for c in 0..self.channels {
            let plane =
                &mut sample[c * self.height * self.width..(c + 1) * self.height * self.width];
            for u in 0..k {
                for v in 0..k {
                    let row = (c * k + u) * k + v;
                    let src = &col[row * p..(row + 1) * p];
                    for i in 0..self.out_h {
                        let y = (i * self.stride + u) as isize - self.padding as isize;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[y as usize * self.width..(y as usize + 1) * self.width];
                        for j in 0..self.out_w {
                            let x = (j * self.stride + v) as isize - self.padding as isize;
                            if x >= 0 && x < self.width as isize {
                                dst[x as usize] += src[i * self.out_w + j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `kernels` is `O x C x k x k`, `bias` has length `O`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = Geometry::new(input, kernels, stride, padding)?;
    if bias.len() != g.out_channels {
        return Err(Error::Shape(alloc::format!(
            "bias has {} entries for {} output channels",
            bias.len(),
            g.out_channels
        )));
    }
    let p = g.positions();
    let plen = g.patch_len();
    let mut out = Tensor::zeros(&[g.batch, g.out_channels, g.out_h, g.out_w]);
    let mut col = vec![0.0; plen * p];
    let w = MatRef::row_major(kernels.data(), g.out_channels, plen);
    for n in 0..g.batch {
        g.im2col(input.row(n), &mut col);
        let dst = out.row_mut(n);
        for (o, b) in bias.data().iter().enumerate() {
            dst[o * p..(o + 1) * p].fill(*b);
        }
        gemm(w, MatRef::row_major(&col, plen, p), 1.0, dst);
    }
    Ok(out)
}

/// Gradients of `sum(d_output * conv2d_forward(..))` with respect to input,
/// kernels and bias (in that order inside `d_params`).
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    padding: usize,
    d_output: &Tensor,
) -> Result<LayerGrads> {
    let g = Geometry::new(input, kernels, stride, padding)?;
    let expected = [g.batch, g.out_channels, g.out_h, g.out_w];
    if d_output.shape() != expected {
        return Err(Error::Shape(alloc::format!(
            "d_output shape {:?} != forward output {:?}",
            d_output.shape(),
            expected
        )));
    }
    let p = g.positions();
    let plen = g.patch_len();
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_kernels = Tensor::zeros(kernels.shape());
    let mut d_bias = Tensor::zeros(&[g.out_channels]);
    let mut col = vec![0.0; plen * p];
    let mut d_col = vec![0.0; plen * p];
    let w = MatRef::row_major(kernels.data(), g.out_channels, plen);
    for n in 0..g.batch {
        let dy = d_output.row(n);
        for (o, db) in d_bias.data_mut().iter_mut().enumerate() {
            *db += dy[o * p..(o + 1) * p].iter().sum::<f32>();
        }
        g.im2col(input.row(n), &mut col);
        let dy_mat = MatRef::row_major(dy, g.out_channels, p);
        gemm(
            dy_mat,
            MatRef::row_major(&col, plen, p).t(),
            1.0,
            d_kernels.data_mut(),
        );
        gemm(w.t(), dy_mat, 0.0, &mut d_col);
        g.col2im(&d_col, d_input.row_mut(n));
    }
    Ok(LayerGrads {
        d_input,
        d_params: Vec::from([d_kernels, d_bias]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_rules() {
        assert_eq!(output_extent(32, 3, 1, 1), Some(32));
        assert_eq!(output_extent(8, 2, 2, 0), Some(4));
        assert_eq!(output_extent(7, 2, 2, 0), None);
        assert_eq!(output_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::filled(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &k, &b, 1, 0).unwrap();
        assert_eq!(out, input);

        let grads = conv2d_backward(&input, &k, 1, 0, &Tensor::filled(&[1, 1, 3, 3], 1.0)).unwrap();
        assert!(grads.d_input.data().iter().all(|&v| v == 1.0));
        assert_eq!(grads.d_params[0].data(), &[45.0]);
        assert_eq!(grads.d_params[1].data(), &[9.0]);
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let input = Tensor::from_vec(&[2, 2, 4, 4], (0..64).map(|v| v as f32 * 0.1).collect()).unwrap();
        let out = conv2d_forward(
            &input,
            &Tensor::zeros(&[3, 2, 3, 3]),
            &Tensor::zeros(&[3]),
            1,
            1,
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let input = Tensor::filled(&[1, 2, 5, 5], 0.5);
        let k = Tensor::filled(&[2, 2, 3, 3], 0.25);
        let g = conv2d_backward(&input, &k, 2, 1, &Tensor::zeros(&[1, 2, 3, 3])).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g.d_params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shape_errors() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let b = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&input, &Tensor::zeros(&[1, 3, 3, 3]), &b, 1, 1),
            Err(Error::Shape(_))
        ));
        // (4 + 0 - 3) / 2 is not integral
        assert!(conv2d_forward(&input, &Tensor::zeros(&[1, 2, 3, 3]), &b, 2, 0).is_err());
        assert!(conv2d_forward(&input, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2]), 1, 1).is_err());
        assert!(conv2d_backward(
            &input,
            &Tensor::zeros(&[1, 2, 3, 3]),
            1,
            1,
            &Tensor::zeros(&[1, 1, 3, 3])
        )
        .is_err());
    }
}
