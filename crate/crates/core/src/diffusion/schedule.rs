use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COSINE_OFFSET: f64 = 0.008;
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::BadKind(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Noise schedule indexed by step `0..=T`. Index 0 is the clean data:
/// `alpha_bars[0] = 1` and `betas[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// Builds a schedule. The cosine form clips each `beta_t` to
/// `[BETA_MIN, BETA_MAX]`, so `alpha_bar_1 = 1 - BETA_MIN`.
pub fn make_schedule(kind: ScheduleKind, num_steps: usize) -> Result<DiffusionSchedule> {
    if num_steps == 0 {
        return Err(Error::BadKind("schedule needs at least one step".into()));
    }
    let t_max = num_steps as f64;
    let mut betas = vec![0.0; num_steps + 1];
    match kind {
        ScheduleKind::Cosine => {
            let f = |t: f64| ((t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos().powi(2);
            for t in 1..=num_steps {
                let raw = 1.0 - f(t as f64) / f((t - 1) as f64);
                betas[t] = raw.clamp(BETA_MIN, BETA_MAX);
            }
        }
        ScheduleKind::Linear => {
            let (lo, hi) = (1e-4, 0.02);
            for t in 1..=num_steps {
                betas[t] = if num_steps == 1 {
                    lo
                } else {
                    lo + (hi - lo) * (t - 1) as f64 / (num_steps - 1) as f64
                };
            }
        }
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = vec![1.0; num_steps + 1];
    for t in 1..=num_steps {
        alpha_bars[t] = alpha_bars[t - 1] * alphas[t];
    }
    Ok(DiffusionSchedule {
        kind,
        num_steps,
        betas,
        alphas,
        alpha_bars,
    })
}

impl DiffusionSchedule {
    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.num_steps {
            return Err(Error::OutOfRange(format!("timestep {t} > {}", self.num_steps)));
        }
        Ok(())
    }

    /// `sqrt(abar_t) m0 + sqrt(1 - abar_t) noise`, elementwise.
    pub fn q_sample(&self, m0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if m0.len() != noise.len() {
            return Err(Error::ShapeMismatch(format!("m0 {} vs noise {}", m0.len(), noise.len())));
        }
        let (a, b) = (self.alpha_bars[t].sqrt(), (1.0 - self.alpha_bars[t]).sqrt());
        Ok(m0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
    }

    /// Batched `q_sample` on `(B, ...)` tensors with one step per batch row.
    pub fn q_sample_tensor(&self, m0: &Tensor, t: &[usize], noise: &Tensor) -> Result<Tensor> {
        if m0.dims() != noise.dims() || m0.dim(0)? != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "q_sample: m0 {:?}, noise {:?}, {} steps",
                m0.dims(),
                noise.dims(),
                t.len()
            )));
        }
        for &ti in t {
            self.check_t(ti)?;
        }
        let mut shape = vec![1usize; m0.rank()];
        shape[0] = t.len();
        let a: Vec<f64> = t.iter().map(|&ti| self.alpha_bars[ti].sqrt()).collect();
        let b: Vec<f64> = t.iter().map(|&ti| (1.0 - self.alpha_bars[ti]).sqrt()).collect();
        let a = Tensor::from_vec(a, shape.as_slice(), m0.device())?.to_dtype(m0.dtype())?;
        let b = Tensor::from_vec(b, shape.as_slice(), m0.device())?.to_dtype(m0.dtype())?;
        Ok((m0.broadcast_mul(&a)? + noise.broadcast_mul(&b)?)?)
    }

    /// Coefficients `(c_x0, c_xt, variance)` of the Gaussian posterior
    /// `q(x_{t-1} | x_t, x_0)`; the variance is 0 at `t = 1`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        if t == 0 {
            return Err(Error::OutOfRange("posterior needs t >= 1".into()));
        }
        self.check_t(t)?;
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bars[t - 1];
        let beta = self.betas[t];
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = self.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = if t == 1 { 0.0 } else { (1.0 - ab_prev) / (1.0 - ab) * beta };
        Ok((c0, ct, var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_is_strictly_decreasing_with_clean_start() {
        let s = make_schedule(ScheduleKind::Cosine, 1000).unwrap();
        assert_eq!(s.alpha_bars[0], 1.0);
        assert!(s.alpha_bars[1] > 0.999);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars[1000] < 1e-6);
        assert!(s.alphas[1..].iter().all(|a| *a > 0.0 && *a < 1.0));
    }

    #[test]
    fn linear_four_steps_by_hand() {
        let s = make_schedule(ScheduleKind::Linear, 4).unwrap();
        let betas = [1e-4, 1e-4 + 0.0199 / 3.0, 1e-4 + 2.0 * 0.0199 / 3.0, 0.02];
        let mut prod = 1.0;
        for t in 1..=4 {
            prod *= 1.0 - betas[t - 1];
            assert!((s.alpha_bars[t] - prod).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(make_schedule(ScheduleKind::Cosine, 0), Err(Error::BadKind(_))));
        assert!(matches!("quadratic".parse::<ScheduleKind>(), Err(Error::BadKind(_))));
    }

    #[test]
    fn q_sample_edge_cases() {
        let s = make_schedule(ScheduleKind::Cosine, 100).unwrap();
        let m0 = [0.3, -1.2, 4.0];
        let noise = [1.0, 2.0, -0.5];
        assert_eq!(s.q_sample(&m0, 0, &noise).unwrap(), m0.to_vec());
        let z = s.q_sample(&[0.0; 3], 40, &noise).unwrap();
        let b = (1.0 - s.alpha_bars[40]).sqrt();
        for (x, e) in z.iter().zip(&noise) {
            assert_eq!(*x, b * e);
        }
        assert!(matches!(s.q_sample(&m0, 101, &noise), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn posterior_mean_fixed_point() {
        // With equal abar at t and t-1 (beta_t = 0) the mean reduces to x_t.
        let mut s = make_schedule(ScheduleKind::Linear, 10).unwrap();
        s.betas[5] = 0.0;
        s.alphas[5] = 1.0;
        s.alpha_bars[5] = s.alpha_bars[4];
        let (c0, ct, _) = s.posterior(5).unwrap();
        let x = 0.7;
        assert!((c0 * x + ct * x - x).abs() < 1e-15);
        assert_eq!(s.posterior(1).unwrap().2, 0.0);
        assert!(s.posterior(0).is_err());
    }
}
