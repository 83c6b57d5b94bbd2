use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adan::{Adan, AdanConfig};
use super::loss::{loss_terms, motions_to_tensor, LossBreakdown, LossWeights, TensorFk};
use super::schedule::{make_schedule, DiffusionSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::net::{pose_features, ConditionEncoding, Denoiser, ParamStore, POSE_FEATURES};
use crate::pose::Pose2DSequence;
use crate::rng::stream_rng;
use crate::skeleton::{Motion, Skeleton};

/// A model that can be trained with the diffusion objective.
pub trait DiffusionModel {
    fn dtype(&self) -> DType;
    fn encode(&self, feats: &Tensor) -> Result<ConditionEncoding>;
    fn null_condition(&self, b: usize, s: usize) -> Result<ConditionEncoding>;
    /// Clean-motion prediction; dropout is active when `rng` is given.
    fn forward(
        &self,
        x_t: &Tensor,
        t: &[usize],
        cond: Option<&ConditionEncoding>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor>;
    /// Parameters the optimizer updates.
    fn trainable(&self) -> &ParamStore;
}

impl DiffusionModel for Denoiser {
    fn dtype(&self) -> DType {
        Denoiser::dtype(self)
    }

    fn encode(&self, feats: &Tensor) -> Result<ConditionEncoding> {
        self.encode_features(feats)
    }

    fn null_condition(&self, b: usize, s: usize) -> Result<ConditionEncoding> {
        Denoiser::null_condition(self, b, s)
    }

    fn forward(
        &self,
        x_t: &Tensor,
        t: &[usize],
        cond: Option<&ConditionEncoding>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        Denoiser::forward(self, x_t, t, cond, rng)
    }

    fn trainable(&self) -> &ParamStore {
        self.params()
    }
}

/// A training window: target motion and its per-frame condition features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub motion: Motion,
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl TrainingSample {
    /// `pose` should already be cleaned and normalized.
    pub fn from_pose(motion: Motion, pose: &Pose2DSequence) -> Result<Self> {
        Self::from_features(motion, pose_features(pose), POSE_FEATURES)
    }

    pub fn from_features(motion: Motion, features: Vec<f64>, feature_dim: usize) -> Result<Self> {
        if feature_dim == 0 || features.len() != motion.len() * feature_dim {
            return Err(Error::LengthMismatch(format!(
                "{} feature values for {} frames of width {feature_dim}",
                features.len(),
                motion.len()
            )));
        }
        Ok(Self {
            motion,
            features,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }
}

/// Condition features of a batch as `(B, S, F)`.
pub fn features_tensor(samples: &[&TrainingSample]) -> Result<Tensor> {
    let s = samples.first().map(|x| x.len()).unwrap_or(0);
    let f = samples.first().map(|x| x.feature_dim).unwrap_or(1);
    if samples.iter().any(|x| x.len() != s || x.feature_dim != f) {
        return Err(Error::LengthMismatch("batch mixes window lengths or feature widths".into()));
    }
    let data: Vec<f64> = samples.iter().flat_map(|x| x.features.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (samples.len(), s, f), &candle_core::Device::Cpu)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub adan: AdanConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub cond_dropout_prob: f64,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub num_timesteps: usize,
    pub loss_weights: LossWeights,
    /// Apply auxiliary losses only to samples with `t < T/2`.
    pub aux_gate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.02,
            optimizer: OptimizerKind::Adan,
            adan: AdanConfig::default(),
            epochs: 1000,
            batch_size: 8,
            cond_dropout_prob: 0.25,
            seed: 0,
            schedule: ScheduleKind::Cosine,
            num_timesteps: 1000,
            loss_weights: LossWeights::default(),
            aux_gate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout_prob) {
            return Err(Error::Config(format!("cond_dropout_prob {}", self.cond_dropout_prob)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.loss_weights.validate()
    }

    pub fn steps_per_epoch(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Owns the optimizer state and random streams of one training run.
pub struct Trainer {
    cfg: TrainConfig,
    sched: DiffusionSchedule,
    skeleton: Skeleton,
    fk: Option<TensorFk>,
    opt: Adan,
    rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, skeleton: Skeleton) -> Result<Self> {
        cfg.validate()?;
        let sched = make_schedule(cfg.schedule, cfg.num_timesteps)?;
        let opt = Adan::new(cfg.adan, cfg.learning_rate, cfg.weight_decay)?;
        Ok(Self {
            rng: stream_rng(cfg.seed, 0),
            dropout_rng: stream_rng(cfg.seed, 1),
            cfg,
            sched,
            skeleton,
            fk: None,
            opt,
            step: 0,
        })
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// One optimizer step on `batch`.
    pub fn train_step<M: DiffusionModel>(&mut self, model: &M, batch: &[&TrainingSample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::TooFew { needed: 1, got: 0 });
        }
        let dtype = model.dtype();
        if self.fk.is_none() {
            self.fk = Some(TensorFk::new(&self.skeleton, dtype)?);
        }
        let b = batch.len();
        let motions: Vec<&Motion> = batch.iter().map(|x| &x.motion).collect();
        let m0 = motions_to_tensor(&motions)?;
        let (_, s, d) = m0.dims3()?;
        let t_max = self.sched.num_steps;
        let t: Vec<usize> = (0..b).map(|_| self.rng.random_range(1..=t_max)).collect();
        let noise: Vec<f64> = (0..b * s * d).map(|_| self.rng.sample(StandardNormal)).collect();
        let keep: Vec<bool> = (0..b).map(|_| !self.rng.random_bool(self.cfg.cond_dropout_prob)).collect();
        let noise = Tensor::from_vec(noise, (b, s, d), m0.device())?;
        let x_t = self.sched.q_sample_tensor(&m0, &t, &noise)?.to_dtype(dtype)?;
        let m0 = m0.to_dtype(dtype)?;
        let cond = model.encode(&features_tensor(batch)?)?;
        let cond = cond.blend(&model.null_condition(b, s)?, &keep)?;
        let pred = model.forward(&x_t, &t, Some(&cond), Some(&mut self.dropout_rng))?;
        let fk = self.fk.as_ref().expect("initialized above");
        let terms = loss_terms(fk, &self.skeleton, &m0, &pred)?;
        let gate: Vec<bool> = t.iter().map(|&ti| !self.cfg.aux_gate || 2 * ti < t_max).collect();
        let (total, breakdown) = terms.total(&self.cfg.loss_weights, &gate)?;
        self.step += 1;
        if ![breakdown.total, breakdown.simple, breakdown.joints, breakdown.velocity, breakdown.foot]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("timesteps {t:?}, condition kept {keep:?}, losses {breakdown:?}"),
            });
        }
        let grads = total.backward()?;
        self.opt.step(model.trainable(), &grads)?;
        Ok(breakdown)
    }

    /// Runs `cfg.epochs` shuffled passes over `samples`, reporting every step.
    pub fn fit<M: DiffusionModel>(
        &mut self,
        model: &M,
        samples: &[TrainingSample],
        on_step: impl FnMut(&StepLog),
    ) -> Result<()> {
        self.run(model, samples, Some(self.cfg.epochs), u64::MAX, on_step)
    }

    /// Like `fit` but stops after `steps` further optimizer steps, however
    /// many epochs that takes.
    pub fn fit_steps<M: DiffusionModel>(
        &mut self,
        model: &M,
        samples: &[TrainingSample],
        steps: u64,
        on_step: impl FnMut(&StepLog),
    ) -> Result<()> {
        let target = self.step.saturating_add(steps);
        self.run(model, samples, None, target, on_step)
    }

    fn run<M: DiffusionModel>(
        &mut self,
        model: &M,
        samples: &[TrainingSample],
        epochs: Option<usize>,
        target: u64,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::TooFew { needed: 1, got: 0 });
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut epoch = 0;
        while epochs.is_none_or(|n| epoch < n) && self.step < target {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                if self.step >= target {
                    break;
                }
                let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
                let loss = self.train_step(model, &batch)?;
                on_step(&StepLog {
                    step: self.step,
                    epoch,
                    loss,
                });
            }
            epoch += 1;
        }
        Ok(())
    }
}

/// Conditional reconstruction MSE averaged over a fixed timestep grid with
/// seed-fixed noise; dropout and condition dropout are off.
pub fn conditional_loss<M: DiffusionModel>(
    model: &M,
    samples: &[TrainingSample],
    sched: &DiffusionSchedule,
    t_grid: &[usize],
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() || t_grid.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    let refs: Vec<&TrainingSample> = samples.iter().collect();
    let m0 = motions_to_tensor(&refs.iter().map(|x| &x.motion).collect::<Vec<_>>())?;
    let (b, s, d) = m0.dims3()?;
    let cond = model.encode(&features_tensor(&refs)?)?;
    let mut rng = stream_rng(seed, 7);
    let mut total = 0.0;
    for &t in t_grid {
        let noise: Vec<f64> = (0..b * s * d).map(|_| rng.sample(StandardNormal)).collect();
        let noise = Tensor::from_vec(noise, (b, s, d), m0.device())?;
        let ts = vec![t; b];
        let x_t = sched.q_sample_tensor(&m0, &ts, &noise)?;
        let pred = model.forward(&x_t.to_dtype(model.dtype())?, &ts, Some(&cond), None)?;
        let mse = (pred.to_dtype(DType::F64)? - &m0)?.sqr()?.mean_all()?.to_scalar::<f64>()?;
        total += mse;
    }
    Ok(total / t_grid.len() as f64)
}
