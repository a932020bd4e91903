//! Central finite-difference checks of every backward kernel.
//!
//! Each case builds a random problem, reduces the op's output to a scalar
//! (a random weighting of the outputs, or the loss itself for the loss ops),
//! and compares analytic gradients with `(f(x + h) - f(x - h)) / 2h` on a
//! sample of coordinates.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classical::{logistic_objective, svm_objective, LinearKind, LinearModel};
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Conv2d,
    MaxPool2d,
    Dense,
    Relu,
    SoftmaxCrossEntropy,
    Hinge,
    SoftmaxRegression,
}

impl GradOp {
    pub const ALL: [GradOp; 7] = [
        GradOp::Conv2d,
        GradOp::MaxPool2d,
        GradOp::Dense,
        GradOp::Relu,
        GradOp::SoftmaxCrossEntropy,
        GradOp::Hinge,
        GradOp::SoftmaxRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Conv2d => "conv2d",
            GradOp::MaxPool2d => "maxpool2d",
            GradOp::Dense => "dense",
            GradOp::Relu => "relu",
            GradOp::SoftmaxCrossEntropy => "softmax_cross_entropy",
            GradOp::Hinge => "hinge",
            GradOp::SoftmaxRegression => "softmax_regression",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f32,
    pub tolerance: f32,
    pub configs_per_op: usize,
    /// Coordinates probed per tensor; smaller tensors are probed exhaustively.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-2,
            configs_per_op: 20,
            max_coords: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub op: GradOp,
    pub description: String,
    /// Worst relative error over the case's tensors.
    pub rel_error: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f32,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.rel_error <= self.tolerance)
    }

    pub fn cases_for(&self, op: GradOp) -> impl Iterator<Item = &GradCheckCase> {
        self.cases.iter().filter(move |c| c.op == op)
    }

    pub fn worst(&self, op: GradOp) -> Option<f32> {
        self.cases_for(op).map(|c| c.rel_error).reduce(f32::max)
    }
}

/// Denominator floor of [`relative_error`]. Gradients smaller than this are
/// judged absolutely, since a 32-bit objective leaves finite differences with
/// noise around 1e-4 even where the true gradient is exactly zero.
pub const NORM_FLOOR: f64 = 0.1;

/// `||a - n|| / max(||a||, ||n||, NORM_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum::<f64>());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

/// Compares `analytic[i]` with finite differences of `f` with respect to `inputs[i]`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    analytic: &[Tensor],
    f: F,
    step: f32,
    max_coords: usize,
    rng: &mut Rng,
) -> Result<f32>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if inputs.len() != analytic.len() {
        return Err(Error::InvalidArgument("one analytic gradient per input expected".into()));
    }
    let mut probe = inputs.to_vec();
    let mut worst = 0.0f64;
    for (i, grad) in analytic.iter().enumerate() {
        if !grad.same_shape(&inputs[i]) {
            return Err(Error::Shape(alloc::format!(
                "gradient {:?} for input {:?}",
                grad.shape(),
                inputs[i].shape()
            )));
        }
        let len = grad.len();
        let coords: Vec<usize> = if len <= max_coords {
            (0..len).collect()
        } else {
            index::sample(rng, len, max_coords).into_vec()
        };
        let mut a = Vec::with_capacity(coords.len());
        let mut n = Vec::with_capacity(coords.len());
        for &j in &coords {
            let x = inputs[i].data()[j];
            let (xp, xm) = (x + step, x - step);
            probe[i].data_mut()[j] = xp;
            let fp = f(&probe)?;
            probe[i].data_mut()[j] = xm;
            let fm = f(&probe)?;
            probe[i].data_mut()[j] = x;
            n.push((fp - fm) / (xp as f64 - xm as f64));
            a.push(grad.data()[j] as f64);
        }
        worst = worst.max(relative_error(&a, &n));
    }
    Ok(worst as f32)
}

fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

/// Values bounded away from zero by `margin`.
fn away_from_zero(shape: &[usize], margin: f32, rng: &mut Rng) -> Tensor {
    let mut t = uniform(shape, margin, 1.0, rng);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

fn weighted_sum(out: &Tensor, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(&o, &w)| o as f64 * w as f64).sum()
}

/// An input extent in `[2, 8]` (or larger if needed) that the window sweep tiles exactly.
fn tiling_extent(window: usize, stride: usize, padding: usize, rng: &mut Rng) -> usize {
    let candidates: Vec<usize> = (2..=8 + window)
        .filter(|&e| ops::output_extent(e, window, stride, padding).is_some())
        .collect();
    candidates[rng.random_range(0..candidates.len())]
}

fn conv_case(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(String, f32)> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let o = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..k);
    let h = tiling_extent(k, stride, padding, rng);
    let w = tiling_extent(k, stride, padding, rng);
    let x = uniform(&[n, c, h, w], -1.0, 1.0, rng);
    let kern = uniform(&[o, c, k, k], -1.0, 1.0, rng);
    let bias = uniform(&[o], -0.5, 0.5, rng);
    let out = ops::conv2d_forward(&x, &kern, &bias, stride, padding)?;
    let up = uniform(out.shape(), -1.0, 1.0, rng);
    let g = ops::conv2d_backward(&x, &kern, stride, padding, &up)?;
    let mut analytic = alloc::vec![g.d_input];
    analytic.extend(g.d_params);
    let err = check_gradients(
        &[x, kern, bias],
        &analytic,
        |t| Ok(weighted_sum(&ops::conv2d_forward(&t[0], &t[1], &t[2], stride, padding)?, &up)),
        cfg.step,
        cfg.max_coords,
        rng,
    )?;
    Ok((
        alloc::format!("x[{n},{c},{h},{w}] k[{o},{c},{k},{k}] s{stride} p{padding}"),
        err,
    ))
}

fn pool_case(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(String, f32)> {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let window = rng.random_range(1..=3);
    let stride = rng.random_range(1..=window.max(2));
    let h = tiling_extent(window, stride, 0, rng);
    let w = tiling_extent(window, stride, 0, rng);
    // distinct values spaced far wider than the step, so no perturbation changes a winner
    let len = n * c * h * w;
    let mut ranks: Vec<usize> = (0..len).collect();
    rand::seq::SliceRandom::shuffle(ranks.as_mut_slice(), rng);
    let spacing = 20.0 * cfg.step;
    let data = ranks.iter().map(|&r| (r as f32 - len as f32 / 2.0) * spacing).collect();
    let x = Tensor::from_vec(&[n, c, h, w], data)?;
    let (out, idx) = ops::maxpool2d_forward(&x, window, stride)?;
    let up = uniform(out.shape(), -1.0, 1.0, rng);
    let d_x = ops::maxpool2d_backward(&idx, &up)?;
    let err = check_gradients(
        &[x],
        &[d_x],
        |t| Ok(weighted_sum(&ops::maxpool2d_forward(&t[0], window, stride)?.0, &up)),
        cfg.step,
        cfg.max_coords,
        rng,
    )?;
    Ok((alloc::format!("x[{n},{c},{h},{w}] w{window} s{stride}"), err))
}

fn dense_case(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(String, f32)> {
    let n = rng.random_range(1..=6);
    let f = rng.random_range(1..=12);
    let u = rng.random_range(1..=8);
    let x = uniform(&[n, f], -1.0, 1.0, rng);
    let w = uniform(&[f, u], -1.0, 1.0, rng);
    let b = uniform(&[u], -0.5, 0.5, rng);
    let out = ops::dense_forward(&x, &w, &b)?;
    let up = uniform(out.shape(), -1.0, 1.0, rng);
    let g = ops::dense_backward(&x, &w, &up)?;
    let mut analytic = alloc::vec![g.d_input];
    analytic.extend(g.d_params);
    let err = check_gradients(
        &[x, w, b],
        &analytic,
        |t| Ok(weighted_sum(&ops::dense_forward(&t[0], &t[1], &t[2])?, &up)),
        cfg.step,
        cfg.max_coords,
        rng,
    )?;
    Ok((alloc::format!("x[{n},{f}] w[{f},{u}]"), err))
}

fn relu_case(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(String, f32)> {
    let n = rng.random_range(1..=4);
    let f = rng.random_range(1..=20);
    let x = away_from_zero(&[n, f], 10.0 * cfg.step, rng);
    let up = uniform(&[n, f], -1.0, 1.0, rng);
    let d_x = ops::relu_backward(&x, &up)?;
    let err = check_gradients(
        &[x],
        &[d_x],
        |t| Ok(weighted_sum(&ops::relu_forward(&t[0]), &up)),
        cfg.step,
        cfg.max_coords,
        rng,
    )?;
    Ok((alloc::format!("x[{n},{f}]"), err))
}

fn labels(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn softmax_ce_case(cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(String, f32)> {
    let n = rng.random_range(1..=6);
    let k = rng.random_range(2..=10);
    let z = uniform(&[n, k], -3.0, 3.0, rng);
    let y = labels(n, k, rng);
    let (_, d_z) = ops::cross_entropy(&ops::softmax(&z)?, &y)?;
    let err = check_gradients(
        &[z],
        &[d_z],
        |t| Ok(ops::cross_entropy(&ops::softmax(&t[0])?, &y)?.0 as f64),
        cfg.step,
        cfg.max_coords,
        rng,
    )?;
    Ok((alloc::format!("z[{n},{k}]"), err))
}

fn linear_inputs(kind: LinearKind, rng: &mut Rng) -> (LinearModel, Tensor, Vec<u8>) {
    let n = rng.random_range(1..=8);
    let f = rng.random_range(1..=10);
    let k = rng.random_range(2..=5);
    let model = LinearModel {
        kind,
        weights: uniform(&[k, f], -1.0, 1.0, rng),
        bias: uniform(&[k], -1.0, 1.0, rng),
    };
    let x = uniform(&[n, f], -1.0, 1.0, rng);
    let y = labels(n, k, rng).into_iter().map(|l| l as u8).collect();
    (model, x, y)
}

fn linear_case(kind: LinearKind, cfg: &GradCheckConfig, rng: &mut Rng) -> Result<(String, f32)> {
    let reg = 0.1;
    let (model, x, y) = if kind == LinearKind::Svm {
        // every margin must stay clear of the hinge kink under any single perturbation
        let f_max = 10.0 * cfg.step * 2.0;
        loop {
            let (m, x, y) = linear_inputs(kind, rng);
            let scores = m.scores(&x)?;
            let clear = (0..y.len()).all(|i| {
                scores.row(i).iter().enumerate().all(|(c, &s)| {
                    let t = if c == y[i] as usize { 1.0 } else { -1.0 };
                    libm::fabsf(1.0 - t * s) > f_max
                })
            });
            if clear {
                break (m, x, y);
            }
        }
    } else {
        linear_inputs(kind, rng)
    };
    let objective = |m: &LinearModel| match kind {
        LinearKind::Svm => svm_objective(m, &x, &y, reg),
        LinearKind::Logistic => logistic_objective(m, &x, &y, reg),
    };
    let g = objective(&model)?;
    let err = check_gradients(
        &[model.weights.clone(), model.bias.clone()],
        &[g.d_weights, g.d_bias],
        |t| {
            let m = LinearModel {
                kind,
                weights: t[0].clone(),
                bias: t[1].clone(),
            };
            Ok(objective(&m)?.loss as f64)
        },
        cfg.step,
        cfg.max_coords,
        rng,
    )?;
    Ok((
        alloc::format!("x[{},{}] k{}", x.rows(), x.row_len(), model.num_classes()),
        err,
    ))
}

/// One random case of `op`.
pub fn check_op(op: GradOp, cfg: &GradCheckConfig, rng: &mut Rng) -> Result<GradCheckCase> {
    let (description, rel_error) = match op {
        GradOp::Conv2d => conv_case(cfg, rng)?,
        GradOp::MaxPool2d => pool_case(cfg, rng)?,
        GradOp::Dense => dense_case(cfg, rng)?,
        GradOp::Relu => relu_case(cfg, rng)?,
        GradOp::SoftmaxCrossEntropy => softmax_ce_case(cfg, rng)?,
        GradOp::Hinge => linear_case(LinearKind::Svm, cfg, rng)?,
        GradOp::SoftmaxRegression => linear_case(LinearKind::Logistic, cfg, rng)?,
    };
    Ok(GradCheckCase {
        op,
        description,
        rel_error,
    })
}

/// `configs_per_op` random cases for every op.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(cfg.step > 0.0) || cfg.max_coords == 0 {
        return Err(Error::InvalidArgument("step and max_coords must be positive".into()));
    }
    let mut cases = Vec::with_capacity(GradOp::ALL.len() * cfg.configs_per_op);
    for (s, op) in GradOp::ALL.into_iter().enumerate() {
        let mut r = rng::seeded(rng::derive_seed(cfg.seed, s as u64));
        for _ in 0..cfg.configs_per_op {
            cases.push(check_op(op, cfg, &mut r)?);
        }
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        cases,
    })
}
