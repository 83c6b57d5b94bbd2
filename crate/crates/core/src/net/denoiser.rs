use candle_core::{DType, Module, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{position_table, sinusoid, Attention, LayerNorm, Linear};
use super::params::{Init, ParamStore};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::pose::{Pose2DSequence, NUM_COCO_JOINTS};
use crate::skeleton::MOTION_DIM;

/// Per-frame features of one pose frame: `x·c, y·c, c` for each joint.
pub const POSE_FEATURES: usize = NUM_COCO_JOINTS * 3;

/// Encoded condition: `tokens` is `(B, S, cond_dim)`, `pooled` is `(B, cond_dim)`.
#[derive(Debug, Clone)]
pub struct ConditionEncoding {
    pub tokens: Tensor,
    pub pooled: Tensor,
}

impl ConditionEncoding {
    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.tokens.dim(0)?)
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.tokens.dim(1)?)
    }

    /// Row `b` of the batch, kept 3-D.
    pub fn select(&self, b: usize) -> Result<Self> {
        Ok(Self {
            tokens: self.tokens.narrow(0, b, 1)?,
            pooled: self.pooled.narrow(0, b, 1)?,
        })
    }

    /// Per-sample choice between `self` and `other` (`keep[b]` picks `self`),
    /// done arithmetically so gradients flow only through the chosen rows.
    pub fn blend(&self, other: &Self, keep: &[bool]) -> Result<Self> {
        let b = self.batch_size()?;
        if keep.len() != b {
            return Err(Error::ShapeMismatch(format!("keep mask {} for batch {b}", keep.len())));
        }
        let k: Vec<f64> = keep.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect();
        let dtype = self.tokens.dtype();
        let dev = self.tokens.device();
        let k2 = Tensor::from_vec(k.clone(), (b, 1), dev)?.to_dtype(dtype)?;
        let k3 = k2.unsqueeze(2)?;
        let inv2 = (1.0 - &k2)?;
        let inv3 = (1.0 - &k3)?;
        Ok(Self {
            tokens: (self.tokens.broadcast_mul(&k3)? + other.tokens.broadcast_mul(&inv3)?)?,
            pooled: (self.pooled.broadcast_mul(&k2)? + other.pooled.broadcast_mul(&inv2)?)?,
        })
    }

    pub fn concat(parts: &[ConditionEncoding]) -> Result<Self> {
        let tokens: Vec<_> = parts.iter().map(|c| c.tokens.clone()).collect();
        let pooled: Vec<_> = parts.iter().map(|c| c.pooled.clone()).collect();
        Ok(Self {
            tokens: Tensor::cat(&tokens, 0)?,
            pooled: Tensor::cat(&pooled, 0)?,
        })
    }
}

/// Raw sinusoid bank for a diffusion step: interleaved `(sin, cos)` pairs.
pub fn timestep_embedding(t: usize, max_t: usize, dim: usize) -> Result<Vec<f64>> {
    if t > max_t {
        return Err(Error::OutOfRange(format!("timestep {t} > {max_t}")));
    }
    Ok(sinusoid(t as f64, dim))
}

/// Pose condition features `(S, 51)`, coordinates weighted by confidence.
pub fn pose_features(p: &Pose2DSequence) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len() * POSE_FEATURES);
    for frame in &p.frames {
        for kp in frame {
            out.extend_from_slice(&[kp[0] * kp[2], kp[1] * kp[2], kp[2]]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    ln1: LayerNorm,
    self_attn: Attention,
    film: Linear,
    ln2: LayerNorm,
    cross: Attention,
    ln3: LayerNorm,
    mlp1: Linear,
    mlp2: Linear,
}

/// Parameter declaration: name, shape, initializer.
pub(crate) type Spec = (String, Vec<usize>, Init);

fn linear_spec(out: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize, zero: bool) {
    let init = if zero { Init::Zeros } else { Init::FanIn(fan_in) };
    out.push((format!("{name}.weight"), vec![fan_in, fan_out], init));
    out.push((format!("{name}.bias"), vec![fan_out], init));
}

fn ln_spec(out: &mut Vec<Spec>, name: &str, dim: usize) {
    out.push((format!("{name}.gain"), vec![dim], Init::Ones));
    out.push((format!("{name}.bias"), vec![dim], Init::Zeros));
}

pub(crate) fn block_specs(cfg: &ModelConfig, prefix: &str) -> Vec<Spec> {
    let h = cfg.hidden_dim;
    let c = cfg.cond_dim;
    let mut s = Vec::new();
    ln_spec(&mut s, &format!("{prefix}.ln1"), h);
    for p in ["q", "k", "v", "o"] {
        linear_spec(&mut s, &format!("{prefix}.self.{p}"), h, h, false);
    }
    linear_spec(&mut s, &format!("{prefix}.film"), h, 2 * h, true);
    ln_spec(&mut s, &format!("{prefix}.ln2"), h);
    linear_spec(&mut s, &format!("{prefix}.cross.q"), h, h, false);
    linear_spec(&mut s, &format!("{prefix}.cross.k"), c, h, false);
    linear_spec(&mut s, &format!("{prefix}.cross.v"), c, h, false);
    linear_spec(&mut s, &format!("{prefix}.cross.o"), h, h, false);
    ln_spec(&mut s, &format!("{prefix}.ln3"), h);
    linear_spec(&mut s, &format!("{prefix}.mlp1"), h, cfg.mlp_ratio * h, false);
    linear_spec(&mut s, &format!("{prefix}.mlp2"), cfg.mlp_ratio * h, h, false);
    s
}

pub(crate) fn denoiser_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let h = cfg.hidden_dim;
    let c = cfg.cond_dim;
    let mut s = Vec::new();
    linear_spec(&mut s, "input", MOTION_DIM, h, false);
    linear_spec(&mut s, "time.fc1", h, h, false);
    linear_spec(&mut s, "time.fc2", h, h, false);
    linear_spec(&mut s, "cond.embed", cfg.cond_input_dim, c, false);
    s.push(("cond.null_token".into(), vec![c], Init::Normal(0.5)));
    s.push(("cond.null_pooled".into(), vec![c], Init::Normal(0.5)));
    linear_spec(&mut s, "film_in", c, h, false);
    for i in 0..cfg.num_blocks {
        s.extend(block_specs(cfg, &format!("blocks.{i}")));
    }
    ln_spec(&mut s, "out.ln", h);
    linear_spec(&mut s, "out.proj", h, MOTION_DIM, false);
    s
}

pub(crate) fn create_params(store: &mut ParamStore, specs: &[Spec], rng: &mut ChaCha8Rng) -> Result<()> {
    for (name, shape, init) in specs {
        store.create(name, shape, *init, rng)?;
    }
    Ok(())
}

/// Looks up assembled tensors, optionally detached from autograd.
pub(crate) struct Fetch<'a> {
    pub store: &'a ParamStore,
    pub frozen: bool,
}

impl Fetch<'_> {
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let t = self.store.tensor(name)?;
        Ok(if self.frozen { t.detach() } else { t })
    }

    pub fn linear(&self, name: &str) -> Result<Linear> {
        Ok(Linear {
            weight: self.tensor(&format!("{name}.weight"))?,
            bias: self.tensor(&format!("{name}.bias"))?,
        })
    }

    pub fn ln(&self, name: &str) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gain: self.tensor(&format!("{name}.gain"))?,
            bias: self.tensor(&format!("{name}.bias"))?,
            eps: 1e-5,
        })
    }

    fn attention(&self, name: &str, heads: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.linear(&format!("{name}.q"))?,
            k: self.linear(&format!("{name}.k"))?,
            v: self.linear(&format!("{name}.v"))?,
            o: self.linear(&format!("{name}.o"))?,
            heads,
        })
    }

    pub(crate) fn block(&self, prefix: &str, heads: usize) -> Result<Block> {
        Ok(Block {
            ln1: self.ln(&format!("{prefix}.ln1"))?,
            self_attn: self.attention(&format!("{prefix}.self"), heads)?,
            film: self.linear(&format!("{prefix}.film"))?,
            ln2: self.ln(&format!("{prefix}.ln2"))?,
            cross: self.attention(&format!("{prefix}.cross"), heads)?,
            ln3: self.ln(&format!("{prefix}.ln3"))?,
            mlp1: self.linear(&format!("{prefix}.mlp1"))?,
            mlp2: self.linear(&format!("{prefix}.mlp2"))?,
        })
    }
}

fn dropout(x: Tensor, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask: Vec<f64> = (0..x.elem_count())
                .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            let m = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
            Ok((x * m)?)
        }
        _ => Ok(x),
    }
}

/// `γ·h + β` with `γ = 1 + raw[..H]`, `β = raw[H..]`, one pair per sample.
pub fn film(h: &Tensor, raw: &Tensor) -> Result<Tensor> {
    let hd = h.dim(D::Minus1)?;
    let gamma = (raw.narrow(1, 0, hd)? + 1.0)?.unsqueeze(1)?;
    let beta = raw.narrow(1, hd, hd)?.unsqueeze(1)?;
    Ok(h.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
}

impl Block {
    pub(crate) fn forward(
        &self,
        h: &Tensor,
        film_ctx: &Tensor,
        tokens: &Tensor,
        dropout_rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let x = self.ln1.forward(h)?;
        let a = dropout(self.self_attn.forward(&x, &x)?, dropout_rate, rng.as_deref_mut())?;
        let h = (h + a)?;
        let h = film(&h, &self.film.forward(film_ctx)?)?;
        let c = self.cross.forward(&self.ln2.forward(&h)?, tokens)?;
        let h = (&h + dropout(c, dropout_rate, rng.as_deref_mut())?)?;
        let m = self.mlp2.forward(&self.mlp1.forward(&self.ln3.forward(&h)?)?.gelu()?)?;
        Ok((&h + dropout(m, dropout_rate, rng.as_deref_mut())?)?)
    }
}

/// Shared state computed once per forward pass before the blocks.
pub(crate) struct Embedded {
    pub h: Tensor,
    pub film_ctx: Tensor,
    pub tokens: Tensor,
}

/// The denoising network: predicts the clean motion from a noised one.
#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: ModelConfig,
    params: ParamStore,
    input: Linear,
    time1: Linear,
    time2: Linear,
    cond_embed: Linear,
    null_token: Tensor,
    null_pooled: Tensor,
    film_in: Linear,
    pub(crate) blocks: Vec<Block>,
    out_ln: LayerNorm,
    out_proj: Linear,
    motion_pe: Tensor,
    cond_pe: Tensor,
}

impl Denoiser {
    /// Freshly initialized model; weights are a deterministic function of `cfg.init_seed`.
    pub fn new(cfg: &ModelConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        create_params(&mut store, &denoiser_specs(cfg), &mut rng)?;
        Self::assemble(cfg, store, false)
    }

    pub(crate) fn assemble(cfg: &ModelConfig, params: ParamStore, frozen: bool) -> Result<Self> {
        let f = Fetch { store: &params, frozen };
        let dtype = params.dtype();
        let dev = params.device().clone();
        let blocks = (0..cfg.num_blocks)
            .map(|i| f.block(&format!("blocks.{i}"), cfg.num_heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input: f.linear("input")?,
            time1: f.linear("time.fc1")?,
            time2: f.linear("time.fc2")?,
            cond_embed: f.linear("cond.embed")?,
            null_token: f.tensor("cond.null_token")?,
            null_pooled: f.tensor("cond.null_pooled")?,
            film_in: f.linear("film_in")?,
            blocks,
            out_ln: f.ln("out.ln")?,
            out_proj: f.linear("out.proj")?,
            motion_pe: position_table(cfg.max_len, cfg.hidden_dim, dtype, &dev)?,
            cond_pe: position_table(cfg.max_len, cfg.cond_dim, dtype, &dev)?,
            cfg: cfg.clone(),
            params,
        })
    }

    /// Same weights with autograd cut: gradients never reach these parameters.
    pub fn frozen(&self) -> Result<Self> {
        Self::assemble(&self.cfg, self.params.clone(), true)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    fn check_len(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.cfg.max_len {
            return Err(Error::LengthMismatch(format!(
                "sequence length {s} outside 1..={}",
                self.cfg.max_len
            )));
        }
        Ok(())
    }

    /// Encodes a batch of equal-length pose sequences.
    pub fn encode_condition(&self, poses: &[&Pose2DSequence]) -> Result<ConditionEncoding> {
        if self.cfg.cond_input_dim != POSE_FEATURES {
            return Err(Error::Config(format!(
                "model expects {}-dim condition features, not poses",
                self.cfg.cond_input_dim
            )));
        }
        let s = poses.first().map(|p| p.len()).unwrap_or(0);
        if poses.iter().any(|p| p.len() != s) {
            return Err(Error::LengthMismatch("condition batch has mixed lengths".into()));
        }
        self.check_len(s)?;
        let data: Vec<f64> = poses.iter().flat_map(|p| pose_features(p)).collect();
        let feats = Tensor::from_vec(data, (poses.len(), s, POSE_FEATURES), self.params.device())?;
        self.encode_features(&feats)
    }

    /// Encodes raw per-frame condition features `(B, S, cond_input_dim)`.
    pub fn encode_features(&self, feats: &Tensor) -> Result<ConditionEncoding> {
        let (_, s, f) = feats.dims3()?;
        self.check_len(s)?;
        if f != self.cfg.cond_input_dim {
            return Err(Error::DimMismatch(f, self.cfg.cond_input_dim));
        }
        let feats = feats.to_dtype(self.dtype())?;
        let tokens = self
            .cond_embed
            .forward(&feats)?
            .broadcast_add(&self.cond_pe.narrow(0, 0, s)?)?;
        let pooled = tokens.mean(1)?;
        Ok(ConditionEncoding { tokens, pooled })
    }

    /// Learned null condition broadcast to `(b, s)`.
    pub fn null_condition(&self, b: usize, s: usize) -> Result<ConditionEncoding> {
        let c = self.cfg.cond_dim;
        Ok(ConditionEncoding {
            tokens: self.null_token.reshape((1, 1, c))?.broadcast_as((b, s, c))?,
            pooled: self.null_pooled.reshape((1, c))?.broadcast_as((b, c))?,
        })
    }

    pub(crate) fn embed(&self, x_t: &Tensor, t: &[usize], cond: Option<&ConditionEncoding>) -> Result<Embedded> {
        let (b, s, d) = x_t.dims3()?;
        if d != MOTION_DIM {
            return Err(Error::ShapeMismatch(format!("motion width {d}, expected {MOTION_DIM}")));
        }
        if t.len() != b {
            return Err(Error::ShapeMismatch(format!("{} timesteps for batch {b}", t.len())));
        }
        self.check_len(s)?;
        let x_t = x_t.to_dtype(self.dtype())?;
        let h = self
            .input
            .forward(&x_t)?
            .broadcast_add(&self.motion_pe.narrow(0, 0, s)?)?;
        let hd = self.cfg.hidden_dim;
        let mut bank = Vec::with_capacity(b * hd);
        for &ti in t {
            bank.extend(timestep_embedding(ti, self.cfg.num_timesteps, hd)?);
        }
        let bank = Tensor::from_vec(bank, (b, hd), self.params.device())?.to_dtype(self.dtype())?;
        let temb = self.time2.forward(&self.time1.forward(&bank)?.silu()?)?;
        let null;
        let cond = match cond {
            Some(c) => {
                if c.batch_size()? != b || c.len()? != s {
                    return Err(Error::ShapeMismatch(format!(
                        "condition {:?} for motion batch ({b}, {s})",
                        c.tokens.dims()
                    )));
                }
                c
            }
            None => {
                null = self.null_condition(b, s)?;
                &null
            }
        };
        let film_ctx = (temb + self.film_in.forward(&cond.pooled)?)?.silu()?;
        Ok(Embedded {
            h,
            film_ctx,
            tokens: cond.tokens.clone(),
        })
    }

    pub(crate) fn head(&self, h: &Tensor) -> Result<Tensor> {
        Ok(self.out_proj.forward(&self.out_ln.forward(h)?)?)
    }

    /// Predicted clean motion `(B, S, 151)` for noised input `x_t` at steps `t`.
    /// `None` uses the learned null condition.
    pub fn denoise(&self, x_t: &Tensor, t: &[usize], cond: Option<&ConditionEncoding>) -> Result<Tensor> {
        self.forward(x_t, t, cond, None)
    }

    /// Forward pass; with `rng` given, dropout is active.
    pub fn forward(
        &self,
        x_t: &Tensor,
        t: &[usize],
        cond: Option<&ConditionEncoding>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let e = self.embed(x_t, t, cond)?;
        let mut h = e.h;
        for block in &self.blocks {
            h = block.forward(&h, &e.film_ctx, &e.tokens, self.cfg.dropout_rate, rng.as_deref_mut())?;
        }
        self.head(&h)
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} parameters, expected {}",
                other.len(),
                self.params.len()
            )));
        }
        self.params.copy_from(other, |n| Some(n.to_string()))
    }
}
