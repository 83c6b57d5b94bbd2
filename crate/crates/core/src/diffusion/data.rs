use nalgebra::Vector3;

use super::train::TrainingSample;
use crate::error::{Error, Result};
use crate::adapter::{beat_features, synthetic_beat_track, BEAT_FEATURES, DEFAULT_BEAT_WIDTH};
use crate::metrics::extract_motion_beats;
use crate::pose::{
    clean_sequence, normalize_condition, window_sequence, DatasetManifest, MotionKind, Pose2DSequence, Split,
};
use crate::rng::derive_seed;
use crate::skeleton::{rot6d_to_matrix, rot_y, yaw_of, Motion, Skeleton};

/// Rotates about the vertical axis so the first frame faces +Z and shifts the
/// root so the first frame sits above the origin. Height is kept.
pub fn canonicalize_motion(m: &Motion) -> Result<Motion> {
    if m.is_empty() {
        return Ok(m.clone());
    }
    let yaw0 = yaw_of(&rot6d_to_matrix(&m.rotation(0, 0))?);
    let r = rot_y(-yaw0);
    let start = m.root(0);
    let shift = Vector3::new(start.x, 0.0, start.z);
    let mut out = m.clone();
    for s in 0..m.len() {
        let root_rot = rot6d_to_matrix(&m.rotation(s, 0))?;
        out.set_rotation_matrix(s, 0, &(r * root_rot))?;
        out.set_root(s, r * (m.root(s) - shift));
    }
    Ok(out)
}

/// Cleaning followed by normalization.
pub fn prepare_condition(p: &Pose2DSequence, conf_threshold: f64) -> Result<Pose2DSequence> {
    normalize_condition(&clean_sequence(p, conf_threshold)?)
}

/// Aligned training windows from every view of every sample in `split`. Each
/// (view, window) pair is an independent sample; windows where a joint is
/// never confidently seen are dropped.
pub fn load_training_windows(
    manifest: &DatasetManifest,
    split: Split,
    length: usize,
    stride: usize,
    conf_threshold: f64,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for sample in manifest.samples_in(split) {
        let motion = manifest.load_motion(sample)?;
        for v in 0..sample.poses.len() {
            let pose = manifest.load_view(sample, v)?;
            for (p, m) in window_sequence(&pose, &motion, length, stride)? {
                match prepare_condition(&p, conf_threshold) {
                    Ok(cond) => out.push(TrainingSample::from_pose(canonicalize_motion(&m)?, &cond)?),
                    Err(Error::AllMissing { joint }) => {
                        log::warn!("{}: view {v} window dropped, joint {joint} never visible", sample.motion);
                    }
                    Err(Error::DegenerateScale(scale)) => {
                        log::warn!("{}: view {v} window dropped, torso scale {scale}", sample.motion);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

/// Motion windows paired with beat features standing in for music. The beat
/// track is the window's own kinematic beats, or a seeded regular grid when
/// the window has none. `kinds` empty means every kind; at most `limit`
/// windows are returned.
pub fn load_beat_windows(
    manifest: &DatasetManifest,
    split: Split,
    kinds: &[MotionKind],
    length: usize,
    stride: usize,
    limit: Option<usize>,
) -> Result<Vec<TrainingSample>> {
    if length < 3 || stride == 0 {
        return Err(Error::BadRange(format!("window length {length}, stride {stride}")));
    }
    let skeleton = Skeleton::canonical();
    let mut out = Vec::new();
    for sample in manifest.samples_in(split).filter(|s| kinds.is_empty() || kinds.contains(&s.kind)) {
        let motion = manifest.load_motion(sample)?;
        if motion.len() < length {
            return Err(Error::TooShort { needed: length, got: motion.len() });
        }
        for start in (0..=motion.len() - length).step_by(stride) {
            if limit.is_some_and(|n| out.len() >= n) {
                return Ok(out);
            }
            let window = canonicalize_motion(&motion.slice(start, length))?;
            let mut beats = extract_motion_beats(&window, &skeleton)?;
            if beats.beats.is_empty() {
                beats = synthetic_beat_track(derive_seed(sample.seed, start as u64), length as f64 / window.fps);
            }
            let feats = beat_features(&beats.beats, length, window.fps, DEFAULT_BEAT_WIDTH)?;
            out.push(TrainingSample::from_features(window, feats, BEAT_FEATURES)?);
        }
    }
    Ok(out)
}
