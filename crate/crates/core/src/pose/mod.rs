//! COCO-17 2D keypoint sequences: IO, cleaning, normalization, windowing, and
//! the synthetic multi-view data generator.

mod camera;
mod dataset;
mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Motion;

pub use camera::{
    coco_from_smpl, project_point, render_views, CameraFrame, CameraTrack, CameraTrackFile,
    CocoSource, OcclusionModel, CAMERA_SCHEMA, COCO_FROM_SMPL,
};
pub use dataset::{
    build_dataset, load_manifest, DatasetConfig, DatasetManifest, ManifestSample, Split,
    MANIFEST_SCHEMA,
};
pub use synth::{synth_motion, MotionKind, SynthMeta, SynthMotion, SYNTH_FPS};

pub const NUM_COCO_JOINTS: usize = 17;

pub const COCO_JOINT_NAMES: [&str; NUM_COCO_JOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

pub const COCO_LEFT_SHOULDER: usize = 5;
pub const COCO_RIGHT_SHOULDER: usize = 6;
pub const COCO_LEFT_HIP: usize = 11;
pub const COCO_RIGHT_HIP: usize = 12;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.3;

/// One frame: `(x, y, confidence)` for each COCO joint.
pub type PoseFrame = [[f64; 3]; NUM_COCO_JOINTS];

#[derive(Debug, Clone, PartialEq)]
pub struct Pose2DSequence {
    pub fps: f64,
    pub frames: Vec<PoseFrame>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    fps: f64,
    joints: Vec<String>,
    frames: Vec<Vec<Vec<f64>>>,
}

/// Result of parsing a pose file, with the number of confidences clamped into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ParsedPose {
    pub sequence: Pose2DSequence,
    pub clamped: usize,
}

impl Pose2DSequence {
    pub fn new(fps: f64, frames: Vec<PoseFrame>) -> Self {
        Self { fps, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self::new(self.fps, self.frames[start..start + len].to_vec())
    }

    pub fn parse_json(text: &str) -> Result<ParsedPose> {
        let file: PoseFile = serde_json::from_str(text)?;
        if file.joints.len() != NUM_COCO_JOINTS
            || file.joints.iter().zip(COCO_JOINT_NAMES).any(|(a, b)| a != b)
        {
            return Err(Error::Schema(format!(
                "joint list must be the 17 COCO joints in order, got {:?}",
                file.joints
            )));
        }
        if !(file.fps > 0.0) {
            return Err(Error::Schema(format!("fps must be positive, got {}", file.fps)));
        }
        let mut clamped = 0;
        let mut frames = Vec::with_capacity(file.frames.len());
        for (s, frame) in file.frames.iter().enumerate() {
            if frame.len() != NUM_COCO_JOINTS {
                return Err(Error::Schema(format!(
                    "frame {s} has {} joints, expected {NUM_COCO_JOINTS}",
                    frame.len()
                )));
            }
            let mut out = [[0.0; 3]; NUM_COCO_JOINTS];
            for (j, kp) in frame.iter().enumerate() {
                if kp.len() != 3 || kp.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Schema(format!(
                        "frame {s} joint {j}: expected 3 finite values, got {kp:?}"
                    )));
                }
                let c = kp[2].clamp(0.0, 1.0);
                if c != kp[2] {
                    clamped += 1;
                }
                out[j] = [kp[0], kp[1], c];
            }
            frames.push(out);
        }
        Ok(ParsedPose {
            sequence: Self::new(file.fps, frames),
            clamped,
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = PoseFile {
            fps: self.fps,
            joints: COCO_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().map(|kp| kp.to_vec()).collect())
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Reads a `pose2d-v1` file. Confidences outside `[0, 1]` are clamped with a warning.
pub fn load_pose_json(path: impl AsRef<Path>) -> Result<Pose2DSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = Pose2DSequence::parse_json(&text)?;
    if parsed.clamped > 0 {
        log::warn!(
            "{}: clamped {} confidence values into [0, 1]",
            path.display(),
            parsed.clamped
        );
    }
    Ok(parsed.sequence)
}

/// Replaces low-confidence keypoints by per-joint linear interpolation between
/// the nearest valid frames; leading and trailing gaps take the nearest valid
/// value. Replaced keypoints carry confidence 0.
pub fn clean_sequence(p: &Pose2DSequence, conf_threshold: f64) -> Result<Pose2DSequence> {
    let mut out = p.clone();
    let n = p.len();
    for j in 0..NUM_COCO_JOINTS {
        let valid: Vec<usize> = (0..n).filter(|&s| p.frames[s][j][2] >= conf_threshold).collect();
        if valid.is_empty() {
            if n == 0 {
                continue;
            }
            return Err(Error::AllMissing { joint: j });
        }
        if valid.len() == n {
            continue;
        }
        let mut next = 0;
        for s in 0..n {
            if p.frames[s][j][2] >= conf_threshold {
                continue;
            }
            while next < valid.len() && valid[next] < s {
                next += 1;
            }
            let xy = match (next.checked_sub(1).map(|i| valid[i]), valid.get(next).copied()) {
                (Some(a), Some(b)) => {
                    let w = (s - a) as f64 / (b - a) as f64;
                    let pa = p.frames[a][j];
                    let pb = p.frames[b][j];
                    [pa[0] + (pb[0] - pa[0]) * w, pa[1] + (pb[1] - pa[1]) * w]
                }
                (Some(a), None) => [p.frames[a][j][0], p.frames[a][j][1]],
                (None, Some(b)) => [p.frames[b][j][0], p.frames[b][j][1]],
                (None, None) => unreachable!("valid is non-empty"),
            };
            out.frames[s][j] = [xy[0], xy[1], 0.0];
        }
    }
    Ok(out)
}

fn midpoint(frame: &PoseFrame, a: usize, b: usize) -> [f64; 2] {
    [
        0.5 * (frame[a][0] + frame[b][0]),
        0.5 * (frame[a][1] + frame[b][1]),
    ]
}

/// Centers each frame on the hip midpoint and divides by the median torso
/// length (hip midpoint to shoulder midpoint). Confidences are untouched.
pub fn normalize_condition(p: &Pose2DSequence) -> Result<Pose2DSequence> {
    if p.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut torso: Vec<f64> = p
        .frames
        .iter()
        .map(|f| {
            let h = midpoint(f, COCO_LEFT_HIP, COCO_RIGHT_HIP);
            let s = midpoint(f, COCO_LEFT_SHOULDER, COCO_RIGHT_SHOULDER);
            ((s[0] - h[0]).powi(2) + (s[1] - h[1]).powi(2)).sqrt()
        })
        .collect();
    torso.sort_by(|a, b| a.total_cmp(b));
    let m = torso.len();
    let median = if m % 2 == 1 {
        torso[m / 2]
    } else {
        0.5 * (torso[m / 2 - 1] + torso[m / 2])
    };
    if !(median >= 1e-6) {
        return Err(Error::DegenerateScale(median));
    }
    let mut out = p.clone();
    for frame in out.frames.iter_mut() {
        let h = midpoint(frame, COCO_LEFT_HIP, COCO_RIGHT_HIP);
        for kp in frame.iter_mut() {
            kp[0] = (kp[0] - h[0]) / median;
            kp[1] = (kp[1] - h[1]) / median;
        }
    }
    Ok(out)
}

/// Cuts aligned fixed-length windows starting at `0, stride, 2*stride, ...`;
/// a trailing remainder shorter than `length` is dropped.
pub fn window_sequence(
    p: &Pose2DSequence,
    motion: &Motion,
    length: usize,
    stride: usize,
) -> Result<Vec<(Pose2DSequence, Motion)>> {
    if p.len() != motion.len() {
        return Err(Error::LengthMismatch(format!(
            "pose has {} frames, motion has {}",
            p.len(),
            motion.len()
        )));
    }
    if length == 0 || stride == 0 {
        return Err(Error::BadRange("window length and stride must be positive".into()));
    }
    if p.len() < length {
        return Err(Error::TooShort {
            needed: length,
            got: p.len(),
        });
    }
    Ok((0..=p.len() - length)
        .step_by(stride)
        .map(|s| (p.slice(s, length), motion.slice(s, length)))
        .collect())
}
