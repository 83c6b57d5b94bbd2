use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ops::{LayerNorm, Linear};
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
    Normal(f64),
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing parameter {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        Ok(self.get(name)?.as_tensor().clone())
    }

    /// Creates a parameter, drawing its initial values from `rng`.
    pub fn create(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::FanIn(fan_in) => {
                let a = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = rand_distr::Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| rand_distr::Distribution::sample(&dist, rng)).collect()
            }
        };
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, zero: bool, rng: &mut ChaCha8Rng) -> Result<Linear> {
        let init = if zero { Init::Zeros } else { Init::FanIn(fan_in) };
        Ok(Linear {
            weight: self.create(&format!("{name}.weight"), &[fan_in, fan_out], init, rng)?,
            bias: self.create(&format!("{name}.bias"), &[fan_out], init, rng)?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: self.create(&format!("{name}.gain"), &[dim], Init::Ones, rng)?,
            bias: self.create(&format!("{name}.bias"), &[dim], Init::Zeros, rng)?,
            eps: 1e-5,
        })
    }

    /// Copies values from `other` for every shared name, checking shapes.
    pub fn copy_from(&self, other: &ParamStore, rename: impl Fn(&str) -> Option<String>) -> Result<()> {
        for (name, var) in &self.vars {
            if let Some(src_name) = rename(name) {
                let src = other.get(&src_name)?;
                if src.shape() != var.shape() {
                    return Err(Error::CheckpointMismatch(format!(
                        "{name}: shape {:?} vs {:?}",
                        var.shape(),
                        src.shape()
                    )));
                }
                var.set(&src.as_tensor().to_dtype(self.dtype)?.copy()?)?;
            }
        }
        Ok(())
    }

    /// Parameter values as little-endian f64 bytes in name order, with names and shapes.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn all_finite(&self) -> Result<bool> {
        for var in self.vars.values() {
            let v = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            if v.iter().any(|x| !x.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
