//! DGCK model checkpoints.
//!
//! Layout (little-endian): `"DGCK"`, u32 version, u32 descriptor length, UTF-8
//! JSON descriptor, u32 tensor count, then per tensor u16 name length, name,
//! u8 ndim, ndim x u32 dims, raw f32 values.

use std::path::Path;

use domgen_core::classical::{LinearKind, LinearModel, RandomForest};
use domgen_core::ensemble::{MetaKind, MetaModel};
use domgen_core::nn::{CnnSpec, ModelParams, NamedTensor};
use domgen_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DGCK";
pub const VERSION: u32 = 1;

/// What the tensors of a checkpoint parameterise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDescriptor {
    Cnn {
        spec: CnnSpec,
    },
    Meta {
        meta_kind: MetaKind,
        num_models: usize,
        num_classes: usize,
    },
    Linear {
        linear_kind: LinearKind,
    },
    /// Trees are stored in the descriptor; the checkpoint carries no tensors.
    RandomForest {
        forest: RandomForest,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: ModelDescriptor,
    pub tensors: Vec<NamedTensor>,
}

fn named(name: &str, tensor: &Tensor) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        tensor: tensor.clone(),
    }
}

fn wrong_kind(want: &str) -> Error {
    Error::format("DGCK", format!("checkpoint does not hold a {want}"))
}

impl Checkpoint {
    pub fn from_cnn(spec: &CnnSpec, params: &ModelParams) -> Result<Self> {
        params.check_against(spec)?;
        Ok(Self {
            descriptor: ModelDescriptor::Cnn { spec: spec.clone() },
            tensors: params.entries.clone(),
        })
    }

    pub fn into_cnn(self) -> Result<(CnnSpec, ModelParams)> {
        let ModelDescriptor::Cnn { spec } = self.descriptor else {
            return Err(wrong_kind("CNN"));
        };
        let params = ModelParams { entries: self.tensors };
        params.check_against(&spec)?;
        Ok((spec, params))
    }

    pub fn from_meta(meta: &MetaModel) -> Self {
        Self {
            descriptor: ModelDescriptor::Meta {
                meta_kind: meta.kind,
                num_models: meta.num_models,
                num_classes: meta.num_classes,
            },
            tensors: meta
                .params
                .iter()
                .enumerate()
                .map(|(i, t)| named(&format!("param{i}"), t))
                .collect(),
        }
    }

    pub fn into_meta(self) -> Result<MetaModel> {
        let ModelDescriptor::Meta {
            meta_kind,
            num_models,
            num_classes,
        } = self.descriptor
        else {
            return Err(wrong_kind("meta-learner"));
        };
        // shapes are checked against a freshly initialised model of the same kind
        let template = MetaModel::init(meta_kind, num_models, num_classes, 0)?;
        let params: Vec<Tensor> = self.tensors.into_iter().map(|e| e.tensor).collect();
        if params.len() != template.params.len()
            || params.iter().zip(&template.params).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::format("DGCK", "meta-learner tensors do not match the descriptor"));
        }
        Ok(MetaModel { params, ..template })
    }

    pub fn from_linear(model: &LinearModel) -> Self {
        Self {
            descriptor: ModelDescriptor::Linear { linear_kind: model.kind },
            tensors: vec![named("weights", &model.weights), named("bias", &model.bias)],
        }
    }

    pub fn into_linear(self) -> Result<LinearModel> {
        let ModelDescriptor::Linear { linear_kind } = self.descriptor else {
            return Err(wrong_kind("linear model"));
        };
        let [w, b]: [NamedTensor; 2] = self
            .tensors
            .try_into()
            .map_err(|_| Error::format("DGCK", "linear model needs exactly two tensors"))?;
        let ok = w.tensor.ndim() == 2 && b.tensor.shape() == [w.tensor.shape()[0]];
        if !ok || w.name != "weights" || b.name != "bias" {
            return Err(Error::format("DGCK", "linear model tensors do not match"));
        }
        Ok(LinearModel {
            kind: linear_kind,
            weights: w.tensor,
            bias: b.tensor,
        })
    }

    pub fn from_forest(forest: &RandomForest) -> Self {
        Self {
            descriptor: ModelDescriptor::RandomForest { forest: forest.clone() },
            tensors: Vec::new(),
        }
    }

    pub fn into_forest(self) -> Result<RandomForest> {
        match self.descriptor {
            ModelDescriptor::RandomForest { forest } if self.tensors.is_empty() => Ok(forest),
            _ => Err(wrong_kind("random forest")),
        }
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(&ck.descriptor)?;
    let too_big = |what: &str| Error::format("DGCK", format!("{what} does not fit the header"));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| too_big("descriptor"))?.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&u32::try_from(ck.tensors.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    for e in &ck.tensors {
        out.extend_from_slice(&u16::try_from(e.name.len()).map_err(|_| too_big("tensor name"))?.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(u8::try_from(e.tensor.ndim()).map_err(|_| too_big("ndim"))?);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big("dimension"))?.to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, "DGCK");
    if &r.array::<4>("magic")? != MAGIC {
        return Err(Error::format("DGCK", "bad magic"));
    }
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(Error::format("DGCK", format!("unsupported version {version}")));
    }
    let json_len = r.u32_le("descriptor length")? as usize;
    let json = r.take(json_len, "descriptor")?;
    let json = std::str::from_utf8(json).map_err(|_| Error::format("DGCK", "descriptor is not UTF-8"))?;
    let descriptor: ModelDescriptor = serde_json::from_str(json)?;
    let count = r.u32_le("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16_le("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format("DGCK", "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u8("ndim")? as usize;
        if ndim == 0 {
            return Err(Error::format("DGCK", format!("tensor {name} has no dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32_le("dimension")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("DGCK", "tensor size overflows"))?;
        let raw = r.take(len, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| Error::format("DGCK", e.to_string()))?;
        tensors.push(NamedTensor { name, tensor });
    }
    r.finish()?;
    Ok(Checkpoint { descriptor, tensors })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}
