use std::fs;
use std::path::Path;

use super::AdamState;
use crate::container;
use crate::error::{Error, Result};
use crate::model::{NamedTensor, ParamSet};
use crate::tensor::Tensor;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";
const TIMESTEP: &str = "adam.timestep";
const ITERATION: &str = "train.iteration";

/// Parameters, optimizer state and iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub adam: AdamState,
    pub iteration: u64,
}

fn counter(name: &str, value: u64) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        tensor: Tensor::from_slice(&[1], &[value as f64]).expect("scalar"),
    }
}

fn prefixed<'a>(prefix: &str, set: &'a ParamSet) -> impl Iterator<Item = NamedTensor> + 'a {
    let prefix = prefix.to_string();
    set.tensors().iter().map(move |t| NamedTensor {
        name: format!("{prefix}{}", t.name),
        tensor: t.tensor.clone(),
    })
}

impl Checkpoint {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self.params.tensors().to_vec();
        out.extend(prefixed(ADAM_M, &self.adam.m));
        out.extend(prefixed(ADAM_V, &self.adam.v));
        out.push(counter(TIMESTEP, self.adam.timestep));
        out.push(counter(ITERATION, self.iteration));
        out
    }

    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self> {
        let (mut params, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
        let (mut timestep, mut iteration) = (None, None);
        for t in tensors {
            let scalar = || match t.tensor.data() {
                &[x] if x >= 0.0 && x.fract() == 0.0 => Ok(x as u64),
                _ => Err(Error::Format(format!(
                    "'{}' must be a non-negative integer",
                    t.name
                ))),
            };
            if t.name == TIMESTEP {
                timestep = Some(scalar()?);
            } else if t.name == ITERATION {
                iteration = Some(scalar()?);
            } else if let Some(rest) = t.name.strip_prefix(ADAM_M) {
                m.push(NamedTensor {
                    name: rest.into(),
                    tensor: t.tensor,
                });
            } else if let Some(rest) = t.name.strip_prefix(ADAM_V) {
                v.push(NamedTensor {
                    name: rest.into(),
                    tensor: t.tensor,
                });
            } else {
                params.push(t);
            }
        }
        let missing = |what: &str| Error::Format(format!("checkpoint lacks '{what}'"));
        let checkpoint = Self {
            params: ParamSet::new(params),
            adam: AdamState {
                m: ParamSet::new(m),
                v: ParamSet::new(v),
                timestep: timestep.ok_or_else(|| missing(TIMESTEP))?,
            },
            iteration: iteration.ok_or_else(|| missing(ITERATION))?,
        };
        if !checkpoint.params.same_layout(&checkpoint.adam.m)
            || !checkpoint.params.same_layout(&checkpoint.adam.v)
        {
            return Err(Error::Format(
                "optimizer moments do not match the parameter tensors".into(),
            ));
        }
        Ok(checkpoint)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container::encode(&self.to_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_tensors(container::decode(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
