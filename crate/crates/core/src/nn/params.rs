use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::spec::CnnSpec;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Trained parameters of one network, in the order given by
/// [`CnnSpec::param_shapes`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub entries: Vec<NamedTensor>,
}

impl ModelParams {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.tensor.clone()).collect()
    }

    pub(crate) fn replace(&mut self, tensors: Vec<Tensor>) {
        for (e, t) in self.entries.iter_mut().zip(tensors) {
            e.tensor = t;
        }
    }

    /// Errors unless names and shapes agree exactly with `spec`.
    pub fn check_against(&self, spec: &CnnSpec) -> Result<()> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != self.entries.len() {
            return Err(Error::Shape(alloc::format!(
                "spec has {} parameter tensors, params have {}",
                shapes.len(),
                self.entries.len()
            )));
        }
        for (want, got) in shapes.iter().zip(&self.entries) {
            if want.name != got.name || want.shape.as_slice() != got.tensor.shape() {
                return Err(Error::Shape(alloc::format!(
                    "expected {} {:?}, found {} {:?}",
                    want.name,
                    want.shape,
                    got.name,
                    got.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

/// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
pub fn init_params(spec: &CnnSpec, seed: u64) -> Result<ModelParams> {
    let mut rng = rng::seeded(seed);
    let entries = spec
        .param_shapes()?
        .into_iter()
        .map(|p| {
            let mut t = Tensor::zeros(&p.shape);
            if !p.is_bias {
                let bound = libm::sqrtf(6.0 / p.fan_in as f32);
                for v in t.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
            NamedTensor {
                name: p.name,
                tensor: t,
            }
        })
        .collect();
    Ok(ModelParams { entries })
}
