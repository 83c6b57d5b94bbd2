use candle_core::{DType, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::tensor_to_motions;
use super::schedule::DiffusionSchedule;
use super::train::DiffusionModel;
use crate::error::{Error, Result};
use crate::net::ConditionEncoding;
use crate::rng::stream_rng;
use crate::skeleton::{Motion, MOTION_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMethod {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    pub ddim_steps: usize,
    pub guidance_weight: f64,
    pub ddim_eta: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: SamplerMethod::Ddim,
            ddim_steps: 50,
            guidance_weight: 0.75,
            ddim_eta: 0.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, num_timesteps: usize) -> Result<()> {
        if !(0.0..=4.0).contains(&self.guidance_weight) {
            return Err(Error::Config(format!("guidance weight {} outside [0, 4]", self.guidance_weight)));
        }
        if self.method == SamplerMethod::Ddim && !(1..=num_timesteps).contains(&self.ddim_steps) {
            return Err(Error::Config(format!("ddim_steps {} outside 1..={num_timesteps}", self.ddim_steps)));
        }
        if !(0.0..=1.0).contains(&self.ddim_eta) {
            return Err(Error::Config(format!("ddim_eta {} outside [0, 1]", self.ddim_eta)));
        }
        Ok(())
    }
}

/// Random stream ids derived from the sampler seed.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_STEP: u64 = 1;
pub(crate) const STREAM_CONSTRAINT: u64 = 2;

/// Detached from autograd, so a sampling chain does not keep every step's
/// graph alive.
fn model_x0<M: DiffusionModel>(model: &M, x_t: &Tensor, t: &[usize], cond: Option<&ConditionEncoding>) -> Result<Tensor> {
    Ok(model
        .forward(&x_t.to_dtype(model.dtype())?, t, cond, None)?
        .to_dtype(DType::F64)?
        .detach())
}

/// `(1 - w) * D(x_t, t, NULL) + w * D(x_t, t, cond)` in f64. Without a
/// condition, the unconditional prediction.
pub fn guided_denoise<M: DiffusionModel>(
    model: &M,
    x_t: &Tensor,
    t: &[usize],
    cond: Option<&ConditionEncoding>,
    w: f64,
) -> Result<Tensor> {
    let Some(cond) = cond else {
        return model_x0(model, x_t, t, None);
    };
    if w == 1.0 {
        return model_x0(model, x_t, t, Some(cond));
    }
    let uncond = model_x0(model, x_t, t, None)?;
    if w == 0.0 {
        return Ok(uncond);
    }
    let c = model_x0(model, x_t, t, Some(cond))?;
    Ok(((uncond * (1.0 - w))? + (c * w)?)?)
}

/// One ancestral step from `t` to `t - 1` using the x0-parameterized posterior.
pub fn ddpm_step(x_t: &Tensor, t: usize, x0_hat: &Tensor, sched: &DiffusionSchedule, noise: &Tensor) -> Result<Tensor> {
    let (c0, ct, var) = sched.posterior(t)?;
    let mean = ((x0_hat * c0)? + (x_t * ct)?)?;
    if var == 0.0 {
        return Ok(mean);
    }
    Ok((mean + (noise * var.sqrt())?)?)
}

/// Visited DDIM steps in ascending order: `round((k + 1) T / n)` for `k < n`.
pub fn ddim_timesteps(num_timesteps: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|k| (((k + 1) as f64) * num_timesteps as f64 / n as f64).round() as usize)
        .collect()
}

/// DDIM update from `t` to `t_prev`; `eta = 0` is deterministic.
pub fn ddim_step(
    x_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &DiffusionSchedule,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let ab = sched.alpha_bars[t];
    let ab_prev = sched.alpha_bars[t_prev];
    let eps = ((x_t - (x0_hat * ab.sqrt())?)? / (1.0 - ab).sqrt())?;
    let sigma = if eta > 0.0 && t_prev > 0 {
        eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let out = ((x0_hat * ab_prev.sqrt())? + (eps * dir)?)?;
    if sigma > 0.0 {
        let z = gaussian_like(x_t, rng)?;
        return Ok((out + (z * sigma)?)?);
    }
    Ok(out)
}

pub(crate) fn gaussian(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.0 * shape.1 * shape.2;
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, &candle_core::Device::Cpu)?)
}

fn gaussian_like(x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    gaussian(x.dims3()?, rng)
}

/// Runs the reverse process for a batch of `b` sequences of length `s`.
/// After every update to step `t_prev`, `constrain(t_prev, x)` may rewrite
/// the state (used for masked completion).
pub fn sample_with<M: DiffusionModel>(
    model: &M,
    cond: Option<&ConditionEncoding>,
    b: usize,
    s: usize,
    sched: &DiffusionSchedule,
    scfg: &SamplerConfig,
    mut constrain: impl FnMut(usize, &Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    scfg.validate(sched.num_steps)?;
    if let Some(c) = cond {
        if c.batch_size()? != b || c.len()? != s {
            return Err(Error::ShapeMismatch(format!("condition {:?} for ({b}, {s})", c.tokens.dims())));
        }
    }
    let mut init_rng = stream_rng(scfg.seed, STREAM_INIT);
    let mut step_rng = stream_rng(scfg.seed, STREAM_STEP);
    let mut x = gaussian((b, s, MOTION_DIM), &mut init_rng)?;
    match scfg.method {
        SamplerMethod::Ddim => {
            let ts = ddim_timesteps(sched.num_steps, scfg.ddim_steps);
            for i in (0..ts.len()).rev() {
                let t = ts[i];
                let t_prev = if i == 0 { 0 } else { ts[i - 1] };
                let x0 = guided_denoise(model, &x, &vec![t; b], cond, scfg.guidance_weight)?;
                x = ddim_step(&x, &x0, t, t_prev, sched, scfg.ddim_eta, &mut step_rng)?;
                x = constrain(t_prev, &x)?;
            }
        }
        SamplerMethod::Ddpm => {
            for t in (1..=sched.num_steps).rev() {
                let x0 = guided_denoise(model, &x, &vec![t; b], cond, scfg.guidance_weight)?;
                let noise = if t > 1 {
                    gaussian((b, s, MOTION_DIM), &mut step_rng)?
                } else {
                    x.zeros_like()?
                };
                x = ddpm_step(&x, t, &x0, sched, &noise)?;
                x = constrain(t - 1, &x)?;
            }
        }
    }
    Ok(x)
}

/// Unconstrained sampling; returns `(b, s, 151)` in f64.
pub fn sample<M: DiffusionModel>(
    model: &M,
    cond: Option<&ConditionEncoding>,
    b: usize,
    s: usize,
    sched: &DiffusionSchedule,
    scfg: &SamplerConfig,
) -> Result<Tensor> {
    sample_with(model, cond, b, s, sched, scfg, |_, x| Ok(x.clone()))
}

/// Samples one motion per condition row.
pub fn sample_motions<M: DiffusionModel>(
    model: &M,
    cond: &ConditionEncoding,
    sched: &DiffusionSchedule,
    scfg: &SamplerConfig,
    fps: f64,
) -> Result<Vec<Motion>> {
    let x = sample(model, Some(cond), cond.batch_size()?, cond.len()?, sched, scfg)?;
    tensor_to_motions(&x, fps)
}
