//! Zero-initialized adapter: a trainable copy of every denoiser block whose
//! output joins the frozen backbone through a zero-initialized projection.

use std::path::Path;

use candle_core::{DType, Module, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::metrics::BeatTrack;
use crate::net::ops::Linear;
use crate::net::{
    block_specs, create_params, read_container, write_container, Block, ConditionEncoding, Denoiser, Fetch, Init,
    ModelConfig, ParamStore, TrainingState,
};
use crate::rng::stream_rng;

pub const ADAPTER_SCHEMA: &str = "adapter-v1";

pub struct ZeroConvAdapter {
    backbone: Denoiser,
    backbone_hash: String,
    params: ParamStore,
    clones: Vec<Block>,
    merges: Vec<Linear>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterMeta {
    config: ModelConfig,
    backbone_hash: String,
    state: TrainingState,
}

impl ZeroConvAdapter {
    /// Clones each backbone block (prefix `clone.{i}`) and adds zero merges
    /// (`merge.{i}`). The backbone is used through detached tensors.
    pub fn attach(backbone: &Denoiser) -> Result<Self> {
        let cfg = backbone.config().clone();
        let mut store = ParamStore::new(backbone.dtype());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        for i in 0..cfg.num_blocks {
            create_params(&mut store, &block_specs(&cfg, &format!("clone.{i}")), &mut rng)?;
            let h = cfg.hidden_dim;
            store.create(&format!("merge.{i}.weight"), &[h, h], Init::Zeros, &mut rng)?;
            store.create(&format!("merge.{i}.bias"), &[h], Init::Zeros, &mut rng)?;
        }
        store.copy_from(backbone.params(), |n| n.strip_prefix("clone.").map(|rest| format!("blocks.{rest}")))?;
        Self::assemble(backbone, store)
    }

    fn assemble(backbone: &Denoiser, params: ParamStore) -> Result<Self> {
        let cfg = backbone.config();
        let f = Fetch {
            store: &params,
            frozen: false,
        };
        let clones = (0..cfg.num_blocks)
            .map(|i| f.block(&format!("clone.{i}"), cfg.num_heads))
            .collect::<Result<Vec<_>>>()?;
        let merges = (0..cfg.num_blocks)
            .map(|i| f.linear(&format!("merge.{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            backbone_hash: backbone.params().hash()?,
            backbone: backbone.frozen()?,
            params,
            clones,
            merges,
        })
    }

    pub fn backbone(&self) -> &Denoiser {
        &self.backbone
    }

    /// Parameter hash of the backbone at attach time.
    pub fn backbone_hash(&self) -> &str {
        &self.backbone_hash
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Block parameters of the backbone plus merge projections.
    pub fn expected_parameter_count(cfg: &ModelConfig) -> usize {
        let block: usize = block_specs(cfg, "b").iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        cfg.num_blocks * (block + cfg.hidden_dim * cfg.hidden_dim + cfg.hidden_dim)
    }

    pub fn save(&self, path: impl AsRef<Path>, state: &TrainingState) -> Result<()> {
        let meta = serde_json::to_value(AdapterMeta {
            config: self.backbone.config().clone(),
            backbone_hash: self.backbone_hash.clone(),
            state: state.clone(),
        })?;
        write_container(path, ADAPTER_SCHEMA, meta, &self.params)
    }

    /// Loads adapter weights onto `backbone`, which must match the hash
    /// recorded when the adapter was trained.
    pub fn load(path: impl AsRef<Path>, backbone: &Denoiser) -> Result<(Self, TrainingState)> {
        let (meta, store) = read_container(path, ADAPTER_SCHEMA)?;
        let meta: AdapterMeta = serde_json::from_value(meta)?;
        let hash = backbone.params().hash()?;
        if meta.backbone_hash != hash || &meta.config != backbone.config() {
            return Err(Error::CheckpointMismatch(format!(
                "adapter was trained on backbone {}, got {hash}",
                meta.backbone_hash
            )));
        }
        let fresh = Self::attach(backbone)?;
        if store.len() != fresh.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} adapter tensors, expected {}",
                store.len(),
                fresh.params.len()
            )));
        }
        fresh.params.copy_from(&store, |n| Some(n.to_string()))?;
        Ok((fresh, meta.state))
    }
}

impl DiffusionModel for ZeroConvAdapter {
    fn dtype(&self) -> DType {
        self.backbone.dtype()
    }

    fn encode(&self, feats: &Tensor) -> Result<ConditionEncoding> {
        self.backbone.encode_features(feats)
    }

    fn null_condition(&self, b: usize, s: usize) -> Result<ConditionEncoding> {
        self.backbone.null_condition(b, s)
    }

    fn forward(
        &self,
        x_t: &Tensor,
        t: &[usize],
        cond: Option<&ConditionEncoding>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let rate = self.backbone.config().dropout_rate;
        let e = self.backbone.embed(x_t, t, cond)?;
        let mut hb = e.h.clone();
        let mut hc = e.h;
        for ((block, clone), merge) in self.backbone.blocks.iter().zip(&self.clones).zip(&self.merges) {
            let out = block.forward(&hb, &e.film_ctx, &e.tokens, 0.0, None)?;
            hc = clone.forward(&hc, &e.film_ctx, &e.tokens, rate, rng.as_deref_mut())?;
            hb = (out + merge.forward(&hc)?)?;
        }
        self.backbone.head(&hb)
    }

    fn trainable(&self) -> &ParamStore {
        &self.params
    }
}

/// Pulse width used for beat features, in seconds.
pub const DEFAULT_BEAT_WIDTH: f64 = 0.05;

/// Regular beat grid covering `[0, duration)` with a period in [0.4, 0.8) s
/// and a random phase.
pub fn synthetic_beat_track(seed: u64, duration: f64) -> BeatTrack {
    let mut rng = stream_rng(seed, 0);
    let period = rng.random_range(0.4..0.8);
    let mut t = rng.random_range(0.0..period);
    let mut beats = Vec::new();
    while t < duration {
        beats.push(t);
        t += period;
    }
    BeatTrack { beats }
}

/// Per-frame beat-pulse features standing in for music: a Gaussian bump
/// around each beat and the phase within the current beat interval.
pub const BEAT_FEATURES: usize = 3;

pub fn beat_features(beats: &[f64], len: usize, fps: f64, width: f64) -> Result<Vec<f64>> {
    if beats.is_empty() {
        return Err(Error::EmptyMusic);
    }
    let mut sorted = beats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(len * BEAT_FEATURES);
    for s in 0..len {
        let time = s as f64 / fps;
        let nearest = sorted.iter().map(|b| (time - b).abs()).fold(f64::INFINITY, f64::min);
        let pulse = (-0.5 * (nearest / width).powi(2)).exp();
        let prev = sorted.iter().rev().find(|&&b| b <= time);
        let next = sorted.iter().find(|&&b| b > time);
        let phase = match (prev, next) {
            (Some(p), Some(n)) => (time - p) / (n - p),
            _ => 0.0,
        };
        let angle = std::f64::consts::TAU * phase;
        out.extend([pulse, angle.sin(), angle.cos()]);
    }
    Ok(out)
}
