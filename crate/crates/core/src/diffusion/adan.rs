use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdanConfig {
    pub betas: [f64; 3],
    pub eps: f64,
}

impl Default for AdanConfig {
    fn default() -> Self {
        Self {
            betas: [0.98, 0.92, 0.99],
            eps: 1e-8,
        }
    }
}

struct Slot {
    m: Tensor,
    v: Tensor,
    n: Tensor,
    prev: Tensor,
}

/// Adaptive Nesterov momentum with proximal (decoupled) weight decay.
pub struct Adan {
    cfg: AdanConfig,
    lr: f64,
    weight_decay: f64,
    step: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adan {
    pub fn new(cfg: AdanConfig, lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !(weight_decay >= 0.0) {
            return Err(Error::Config(format!("learning rate {lr}, weight decay {weight_decay}")));
        }
        if cfg.betas.iter().any(|b| !(0.0..1.0).contains(b)) || !(cfg.eps > 0.0) {
            return Err(Error::Config("Adan betas must lie in [0, 1) and eps > 0".into()));
        }
        Ok(Self {
            cfg,
            lr,
            weight_decay,
            step: 0,
            slots: BTreeMap::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params` that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let k = self.step as i32;
        let [b1, b2, b3] = self.cfg.betas;
        let bc1 = 1.0 - b1.powi(k);
        let bc2 = 1.0 - b2.powi(k);
        let bc3 = 1.0 - b3.powi(k);
        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let slot = self.slots.entry(name.clone()).or_insert_with(|| Slot {
                m: g.zeros_like().expect("zeros"),
                v: g.zeros_like().expect("zeros"),
                n: g.zeros_like().expect("zeros"),
                prev: g.clone(),
            });
            let diff = (&g - &slot.prev)?;
            slot.m = ((&slot.m * b1)? + (&g * (1.0 - b1))?)?;
            slot.v = ((&slot.v * b2)? + (&diff * (1.0 - b2))?)?;
            let u = (&g + (&diff * b2)?)?;
            slot.n = ((&slot.n * b3)? + (u.sqr()? * (1.0 - b3))?)?;
            slot.prev = g;
            let num = ((&slot.m / bc1)? + (&slot.v * (b2 / bc2))?)?;
            let denom = ((&slot.n / bc3)?.sqrt()? + self.cfg.eps)?;
            let theta = var.as_tensor().detach();
            let updated = ((theta - (num / denom)? * self.lr)? / (1.0 + self.lr * self.weight_decay))?;
            var.set(&updated)?;
        }
        Ok(())
    }
}
