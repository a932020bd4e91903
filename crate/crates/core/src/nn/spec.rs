//! Architecture descriptions and parameter accounting.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::output_extent;

/// One entry of a sequential architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        units: usize,
    },
}

/// A sequential CNN: input shape, class count, layers and a width multiplier.
///
/// `width_scale` multiplies every conv's `out_channels` and every dense layer
/// except the last (the classifier head), rounding up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnSpec {
    /// `(channels, height, width)`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub layers: Vec<LayerDesc>,
    pub width_scale: f32,
}

/// A layer with every dimension made concrete.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum ResolvedLayer {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        units: usize,
    },
}

/// Named parameter shape belonging to a resolved layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Resolved {
    pub layers: Vec<ResolvedLayer>,
    /// Activation shape after each layer, excluding the batch dimension.
    pub shapes: Vec<Vec<usize>>,
}

pub(crate) fn scale_width(width: usize, scale: f32) -> usize {
    // f32 scales such as 1.1 sit slightly above their decimal value; a relative
    // slack keeps 100 * 1.1 at 110 rather than 111
    let exact = width as f64 * scale as f64;
    let scaled = libm::ceil(exact - 1e-6 * exact.max(1.0));
    (scaled as usize).max(1)
}

impl CnnSpec {
    /// Checks the shape chain and returns concrete layers.
    pub(crate) fn resolve(&self) -> Result<Resolved> {
        if !(self.width_scale >= 1.0) || !self.width_scale.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "width_scale must be >= 1, got {}",
                self.width_scale
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.input_shape.contains(&0) {
            return Err(Error::InvalidArgument("zero-sized input shape".into()));
        }
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerDesc::Dense { .. }));
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let resolved = match *layer {
                LayerDesc::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = spatial(&shape, i)?;
                    let out_c = scale_width(out_channels, self.width_scale);
                    let (Some(oh), Some(ow)) = (
                        output_extent(h, kernel, stride, padding),
                        output_extent(w, kernel, stride, padding),
                    ) else {
                        return Err(Error::Shape(alloc::format!(
                            "layer {i}: conv k={kernel} s={stride} p={padding} does not fit {h}x{w}"
                        )));
                    };
                    shape = alloc::vec![out_c, oh, ow];
                    ResolvedLayer::Conv {
                        in_channels: c,
                        out_channels: out_c,
                        kernel,
                        stride,
                        padding,
                    }
                }
                LayerDesc::Relu => ResolvedLayer::Relu,
                LayerDesc::MaxPool { window, stride } => {
                    let [c, h, w] = spatial(&shape, i)?;
                    let (Some(oh), Some(ow)) = (
                        output_extent(h, window, stride, 0),
                        output_extent(w, window, stride, 0),
                    ) else {
                        return Err(Error::Shape(alloc::format!(
                            "layer {i}: maxpool {window}/{stride} does not tile {h}x{w}"
                        )));
                    };
                    shape = alloc::vec![c, oh, ow];
                    ResolvedLayer::MaxPool { window, stride }
                }
                LayerDesc::Flatten => {
                    shape = alloc::vec![shape.iter().product()];
                    ResolvedLayer::Flatten
                }
                LayerDesc::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(Error::Shape(alloc::format!(
                            "layer {i}: dense needs a flattened input, got {shape:?}"
                        )));
                    }
                    let units = if Some(i) == last_dense {
                        units
                    } else {
                        scale_width(units, self.width_scale)
                    };
                    let inputs = shape[0];
                    shape = alloc::vec![units];
                    ResolvedLayer::Dense { inputs, units }
                }
            };
            layers.push(resolved);
            shapes.push(shape.clone());
        }
        if shape != [self.num_classes] {
            return Err(Error::Shape(alloc::format!(
                "final layer produces {shape:?}, expected [{}]",
                self.num_classes
            )));
        }
        Ok(Resolved { layers, shapes })
    }

    /// Shape-checks the architecture.
    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Names and shapes of every trainable tensor, in storage order.
    pub fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        let resolved = self.resolve()?;
        let mut out = Vec::new();
        for (i, layer) in resolved.layers.iter().enumerate() {
            match *layer {
                ResolvedLayer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    out.push(ParamShape {
                        name: alloc::format!("conv{i}.weight"),
                        shape: alloc::vec![out_channels, in_channels, kernel, kernel],
                        fan_in,
                        is_bias: false,
                    });
                    out.push(ParamShape {
                        name: alloc::format!("conv{i}.bias"),
                        shape: alloc::vec![out_channels],
                        fan_in,
                        is_bias: true,
                    });
                }
                ResolvedLayer::Dense { inputs, units } => {
                    out.push(ParamShape {
                        name: alloc::format!("dense{i}.weight"),
                        shape: alloc::vec![inputs, units],
                        fan_in: inputs,
                        is_bias: false,
                    });
                    out.push(ParamShape {
                        name: alloc::format!("dense{i}.bias"),
                        shape: alloc::vec![units],
                        fan_in: inputs,
                        is_bias: true,
                    });
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Input feature count of the classifier head.
    pub fn head_inputs(&self) -> Result<usize> {
        let resolved = self.resolve()?;
        resolved
            .layers
            .iter()
            .rev()
            .find_map(|l| match *l {
                ResolvedLayer::Dense { inputs, .. } => Some(inputs),
                _ => None,
            })
            .ok_or_else(|| Error::Shape("architecture has no dense layer".into()))
    }
}

fn spatial(shape: &[usize], layer: usize) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(alloc::format!(
            "layer {layer}: expected a (C,H,W) activation, got {shape:?}"
        ))),
    }
}

/// The base learner architecture:
/// conv32-relu-conv32-relu-pool-conv64-relu-pool-flatten-dense128-relu-dense(K).
pub fn build_base_cnn(input_shape: [usize; 3], num_classes: usize) -> Result<CnnSpec> {
    let [_, h, w] = input_shape;
    if h < 8 || w < 8 {
        return Err(Error::InvalidArgument(alloc::format!(
            "input {h}x{w} is too small for two 2x poolings (need at least 8x8)"
        )));
    }
    let conv = |out_channels| LayerDesc::Conv {
        out_channels,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let pool = LayerDesc::MaxPool { window: 2, stride: 2 };
    let spec = CnnSpec {
        input_shape,
        num_classes,
        layers: alloc::vec![
            conv(32),
            LayerDesc::Relu,
            conv(32),
            LayerDesc::Relu,
            pool.clone(),
            conv(64),
            LayerDesc::Relu,
            pool,
            LayerDesc::Flatten,
            LayerDesc::Dense { units: 128 },
            LayerDesc::Relu,
            LayerDesc::Dense { units: num_classes },
        ],
        width_scale: 1.0,
    };
    spec.validate()?;
    Ok(spec)
}

/// Exact number of trainable weights and biases.
pub fn count_params(spec: &CnnSpec) -> Result<usize> {
    Ok(spec
        .param_shapes()?
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum())
}

/// Relative tolerance for matching a capacity target.
pub const HCNN_TOLERANCE: f64 = 0.05;
const SCALE_STEP: f32 = 0.01;

/// Widens the base architecture until its parameter count matches `target`.
///
/// Searches `width_scale` over the grid `1.00, 1.01, ...` and returns the grid
/// point whose count is closest to `target` (the smaller scale on ties).
pub fn build_hcnn(input_shape: [usize; 3], num_classes: usize, target: usize) -> Result<CnnSpec> {
    let base = build_base_cnn(input_shape, num_classes)?;
    let base_count = count_params(&base)?;
    if target < base_count {
        return Err(Error::InvalidArgument(alloc::format!(
            "target {target} is below the base count {base_count}"
        )));
    }
    let with_step = |step: u32| -> CnnSpec {
        let mut spec = base.clone();
        spec.width_scale = 1.0 + step as f32 * SCALE_STEP;
        spec
    };
    let count_at = |step: u32| -> Result<usize> { count_params(&with_step(step)) };

    // exponential probe for an upper bracket, then binary search for the first
    // grid step whose count reaches the target
    let mut hi = 1u32;
    while count_at(hi)? < target {
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::InvalidArgument(alloc::format!("target {target} is unreachable"))
        })?;
    }
    let mut lo = 0u32;
    if count_at(0)? >= target {
        hi = 0;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if count_at(mid)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let above = hi;
    let mut best = above;
    if above > 0 {
        let below = above - 1;
        let d_below = target - count_at(below)?;
        let d_above = count_at(above)? - target;
        if d_below <= d_above {
            best = below;
        }
    }
    let spec = with_step(best);
    let got = count_params(&spec)? as f64;
    if (got - target as f64).abs() > HCNN_TOLERANCE * target as f64 {
        return Err(Error::InvalidArgument(alloc::format!(
            "closest width gives {got} params, outside 5% of {target}"
        )));
    }
    Ok(spec)
}
