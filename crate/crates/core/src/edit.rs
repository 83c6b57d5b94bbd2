//! Masked completion: regenerate the free part of a motion while holding
//! constrained entries to forward-diffused copies of a reference.

use std::ops::Range;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::diffusion::{gaussian, sample_with, DiffusionModel, DiffusionSchedule, SamplerConfig, STREAM_CONSTRAINT};
use crate::error::{Error, Result};
use crate::net::{pose_features, POSE_FEATURES};
use crate::pose::Pose2DSequence;
use crate::rng::stream_rng;
use crate::skeleton::{Motion, MOTION_DIM, ROOT_OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    InBetween,
    InFill,
    Blend,
    Custom,
}

/// Entry-wise constraint mask over `S x 151`; 1 marks a constrained entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub rows: Vec<[u8; MOTION_DIM]>,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, rows: Vec<[u8; MOTION_DIM]>) -> Result<Self> {
        if rows.iter().flatten().any(|&b| b > 1) {
            return Err(Error::BadRange("mask entries must be 0 or 1".into()));
        }
        Ok(Self { kind, rows })
    }

    fn from_frames(kind: MaskKind, len: usize, constrained: impl Fn(usize) -> bool) -> Self {
        let rows = (0..len)
            .map(|s| if constrained(s) { [1; MOTION_DIM] } else { [0; MOTION_DIM] })
            .collect();
        Self { kind, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_set(&self, frame: usize, channel: usize) -> bool {
        self.rows[frame][channel] == 1
    }

    /// Frames whose every channel is constrained.
    pub fn constrained_frames(&self) -> usize {
        self.rows.iter().filter(|r| r.iter().all(|&b| b == 1)).count()
    }

    pub fn count(&self) -> usize {
        self.rows.iter().flatten().filter(|&&b| b == 1).count()
    }

    /// Entry-wise OR of two masks of equal length.
    pub fn union(&self, other: &MaskSpec) -> Result<MaskSpec> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(format!("masks of {} and {} frames", self.len(), other.len())));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| std::array::from_fn(|c| a[c] | b[c]))
            .collect();
        let kind = if self.kind == other.kind { self.kind } else { MaskKind::Custom };
        Ok(MaskSpec { kind, rows })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let v: Vec<f64> = self.rows.iter().flatten().map(|&b| b as f64).collect();
        Ok(Tensor::from_vec(v, (1, self.len(), MOTION_DIM), &Device::Cpu)?)
    }

    /// Parses `inbetween:H,T`, `infill:A,B`, `root`, `all` or `none` for a
    /// sequence of `len` frames.
    pub fn parse(text: &str, len: usize) -> Result<MaskSpec> {
        let (name, args) = text.split_once(':').unwrap_or((text, ""));
        let nums = || -> Result<Vec<usize>> {
            args.split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| Error::BadRange(format!("mask argument {x:?}"))))
                .collect()
        };
        let two = |v: Vec<usize>| -> Result<(usize, usize)> {
            match v[..] {
                [a, b] => Ok((a, b)),
                _ => Err(Error::BadRange(format!("mask {text:?} needs two numbers"))),
            }
        };
        match name {
            "inbetween" => {
                let (h, t) = two(nums()?)?;
                build_inbetween_mask(len, h, t)
            }
            "infill" => {
                let (a, b) = two(nums()?)?;
                build_infill_mask(len, a..b)
            }
            "root" => Ok(build_channel_mask(len, ROOT_OFFSET..MOTION_DIM)),
            "all" => Ok(MaskSpec::from_frames(MaskKind::Custom, len, |_| true)),
            "none" => Ok(MaskSpec::from_frames(MaskKind::Custom, len, |_| false)),
            other => Err(Error::BadKind(format!("unknown mask {other:?}"))),
        }
    }
}

/// Constrains the first `n_head` and last `n_tail` frames.
pub fn build_inbetween_mask(len: usize, n_head: usize, n_tail: usize) -> Result<MaskSpec> {
    if n_head + n_tail >= len {
        return Err(Error::BadRange(format!("{n_head} + {n_tail} constrained frames leave nothing of {len}")));
    }
    Ok(MaskSpec::from_frames(MaskKind::InBetween, len, |s| s < n_head || s >= len - n_tail))
}

/// Constrains every frame outside `hole`.
pub fn build_infill_mask(len: usize, hole: Range<usize>) -> Result<MaskSpec> {
    if hole.start > hole.end || hole.end > len {
        return Err(Error::BadRange(format!("hole {hole:?} outside 0..{len}")));
    }
    Ok(MaskSpec::from_frames(MaskKind::InFill, len, |s| !hole.contains(&s)))
}

/// Constrains the given channels on every frame, e.g. the root trajectory.
pub fn build_channel_mask(len: usize, channels: Range<usize>) -> MaskSpec {
    let mut row = [0u8; MOTION_DIM];
    for c in channels.start..channels.end.min(MOTION_DIM) {
        row[c] = 1;
    }
    MaskSpec {
        kind: MaskKind::Custom,
        rows: vec![row; len],
    }
}

/// Reference and mask for blending: the head of `a` and the tail of `b`
/// are kept and the frames between them are generated.
pub fn blend_request(a: &Motion, b: &Motion, n_head: usize, n_tail: usize, len: usize) -> Result<(Motion, MaskSpec)> {
    if n_head > a.len() || n_tail > b.len() {
        return Err(Error::BadRange(format!(
            "blend wants {n_head} frames of {} and {n_tail} of {}",
            a.len(),
            b.len()
        )));
    }
    let mut mask = build_inbetween_mask(len, n_head, n_tail)?;
    mask.kind = MaskKind::Blend;
    let mut frames = vec![[0.0; MOTION_DIM]; len];
    frames[..n_head].copy_from_slice(&a.frames[..n_head]);
    frames[len - n_tail..].copy_from_slice(&b.frames[b.len() - n_tail..]);
    // Free frames hold a copy of the nearest kept frame; their values never
    // reach the output but must be valid rotations.
    for s in n_head..len - n_tail {
        frames[s] = if n_head > 0 { a.frames[n_head - 1] } else { b.frames[b.len() - n_tail] };
    }
    Ok((Motion::new(a.fps, frames), mask))
}

#[derive(Debug, Clone)]
pub struct EditRequest {
    pub reference: Motion,
    pub mask: MaskSpec,
    /// Cleaned and normalized condition; `None` samples unconditionally.
    pub condition: Option<Pose2DSequence>,
    pub sampler: SamplerConfig,
}

/// Runs the reverse process and after every update to step `t'` replaces
/// constrained entries with the reference diffused to `t'`. At `t' = 0` the
/// diffusion is the identity, so constrained entries come out unchanged.
pub fn complete<M: DiffusionModel>(model: &M, req: &EditRequest, sched: &DiffusionSchedule) -> Result<Motion> {
    let s = req.reference.len();
    if req.mask.len() != s {
        return Err(Error::ShapeMismatch(format!("mask of {} frames for reference of {s}", req.mask.len())));
    }
    let cond = match &req.condition {
        Some(p) => {
            if p.len() != s {
                return Err(Error::ShapeMismatch(format!("condition of {} frames for reference of {s}", p.len())));
            }
            let feats = Tensor::from_vec(pose_features(p), (1, s, POSE_FEATURES), &Device::Cpu)?;
            Some(model.encode(&feats)?)
        }
        None => None,
    };
    let reference = Tensor::from_vec(req.reference.to_flat(), (1, s, MOTION_DIM), &Device::Cpu)?;
    let b = req.mask.to_tensor()?;
    let keep = (1.0 - &b)?;
    let mut rng = stream_rng(req.sampler.seed, STREAM_CONSTRAINT);
    let x = sample_with(model, cond.as_ref(), 1, s, sched, &req.sampler, |t_prev, x| {
        let noise = gaussian((1, s, MOTION_DIM), &mut rng)?;
        let known = sched.q_sample_tensor(&reference, &[t_prev], &noise)?;
        Ok(((&b * known)? + (&keep * x)?)?)
    })?;
    let data = x.flatten_all()?.to_vec1::<f64>()?;
    Motion::from_flat(req.reference.fps, &data)
}
