//! Naive loop references for the forward kernels, shared by integration tests.

#![allow(dead_code)]

use domgen_core::Tensor;
use rand::Rng;

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Direct 7-loop cross-correlation with zero padding, accumulated in f64.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = k.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0f32; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[oi] as f64;
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let y = (i * stride + u) as isize - pad as isize;
                                let z = (j * stride + v) as isize - pad as isize;
                                if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                    continue;
                                }
                                let xv = xd[((ni * c + ci) * h + y as usize) * w + z as usize];
                                let kv = kd[((oi * c + ci) * kh + u) * kw + v];
                                acc += xv as f64 * kv as f64;
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + i) * ow + j] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec(&[n, o, oh, ow], out).unwrap()
}

pub fn naive_maxpool(x: &Tensor, window: usize, stride: usize) -> Tensor {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for i in 0..oh {
            for j in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for u in 0..window {
                    for v in 0..window {
                        m = m.max(x.data()[(p * h + i * stride + u) * w + j * stride + v]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out).unwrap()
}

pub fn naive_dense(x: &Tensor, wt: &Tensor, b: &Tensor) -> Tensor {
    let [n, f] = x.shape().try_into().unwrap();
    let u = wt.shape()[1];
    let mut out = Vec::with_capacity(n * u);
    for i in 0..n {
        for j in 0..u {
            let mut acc = b.data()[j] as f64;
            for q in 0..f {
                acc += x.data()[i * f + q] as f64 * wt.data()[q * u + j] as f64;
            }
            out.push(acc as f32);
        }
    }
    Tensor::from_vec(&[n, u], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Random probability table with strictly positive rows summing to 1.
pub fn random_probs(rows: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01f64..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| (v / s) as f32));
    }
    Tensor::from_vec(&[rows, k], data).unwrap()
}

pub fn rows_are_distributions(t: &Tensor, tol: f32) -> bool {
    (0..t.rows()).all(|i| {
        let r = t.row(i);
        r.iter().all(|&p| p >= 0.0 && p.is_finite()) && (r.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() <= tol as f64
    })
}
