use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::{matrix_to_rot6d, rot6d_to_matrix, Rotation6D};
use super::Skeleton;
use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const NUM_CONTACTS: usize = 4;
pub const ROT_DIM: usize = NUM_JOINTS * 6;
pub const CONTACT_OFFSET: usize = ROT_DIM;
pub const ROOT_OFFSET: usize = CONTACT_OFFSET + NUM_CONTACTS;
pub const MOTION_DIM: usize = ROOT_OFFSET + 3;
pub const MOTION_LAYOUT: &str = "rot6d24+contact4+root3";

/// A motion clip: per frame, 24 joint rotations in 6D, 4 foot-contact channels
/// and the root position in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub fps: f64,
    pub frames: Vec<[f64; MOTION_DIM]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionFile {
    fps: f64,
    layout: String,
    frames: Vec<Vec<f64>>,
}

impl Motion {
    pub fn new(fps: f64, frames: Vec<[f64; MOTION_DIM]>) -> Self {
        Self { fps, frames }
    }

    /// Rest pose (identity rotations, contacts on) held at a fixed root position.
    pub fn rest(num_frames: usize, root: Vector3<f64>, fps: f64) -> Self {
        let mut frame = [0.0; MOTION_DIM];
        for j in 0..NUM_JOINTS {
            frame[j * 6..j * 6 + 6].copy_from_slice(&Rotation6D::IDENTITY.0);
        }
        frame[CONTACT_OFFSET..ROOT_OFFSET].fill(1.0);
        frame[ROOT_OFFSET..].copy_from_slice(root.as_slice());
        Self::new(fps, vec![frame; num_frames])
    }

    pub fn from_flat(fps: f64, data: &[f64]) -> Result<Self> {
        if data.len() % MOTION_DIM != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values is not a multiple of {MOTION_DIM}",
                data.len()
            )));
        }
        let frames = data
            .chunks_exact(MOTION_DIM)
            .map(|c| {
                let mut f = [0.0; MOTION_DIM];
                f.copy_from_slice(c);
                f
            })
            .collect();
        Ok(Self::new(fps, frames))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rotation(&self, frame: usize, joint: usize) -> Rotation6D {
        Rotation6D::from_slice(&self.frames[frame][joint * 6..joint * 6 + 6])
    }

    pub fn set_rotation(&mut self, frame: usize, joint: usize, r: Rotation6D) {
        self.frames[frame][joint * 6..joint * 6 + 6].copy_from_slice(&r.0);
    }

    pub fn set_rotation_matrix(&mut self, frame: usize, joint: usize, m: &Matrix3<f64>) -> Result<()> {
        let r = matrix_to_rot6d(m)?;
        self.set_rotation(frame, joint, r);
        Ok(())
    }

    pub fn contacts(&self, frame: usize) -> [f64; NUM_CONTACTS] {
        let mut c = [0.0; NUM_CONTACTS];
        c.copy_from_slice(&self.frames[frame][CONTACT_OFFSET..ROOT_OFFSET]);
        c
    }

    pub fn root(&self, frame: usize) -> Vector3<f64> {
        let f = &self.frames[frame];
        Vector3::new(f[ROOT_OFFSET], f[ROOT_OFFSET + 1], f[ROOT_OFFSET + 2])
    }

    pub fn set_root(&mut self, frame: usize, p: Vector3<f64>) {
        self.frames[frame][ROOT_OFFSET..].copy_from_slice(p.as_slice());
    }

    /// Frames `[start, start + len)` as a new motion.
    pub fn slice(&self, start: usize, len: usize) -> Motion {
        Motion::new(self.fps, self.frames[start..start + len].to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().flatten().all(|v| v.is_finite())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = MotionFile {
            fps: self.fps,
            layout: MOTION_LAYOUT.to_string(),
            frames: self.frames.iter().map(|f| f.to_vec()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MotionFile = serde_json::from_str(text)?;
        if file.layout != MOTION_LAYOUT {
            return Err(Error::Schema(format!(
                "motion layout {:?}, expected {MOTION_LAYOUT:?}",
                file.layout
            )));
        }
        if !(file.fps > 0.0) {
            return Err(Error::Schema(format!("fps must be positive, got {}", file.fps)));
        }
        let mut frames = Vec::with_capacity(file.frames.len());
        for (i, f) in file.frames.iter().enumerate() {
            if f.len() != MOTION_DIM {
                return Err(Error::Schema(format!(
                    "frame {i} has {} values, expected {MOTION_DIM}",
                    f.len()
                )));
            }
            let mut out = [0.0; MOTION_DIM];
            out.copy_from_slice(f);
            frames.push(out);
        }
        Ok(Self::new(file.fps, frames))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Reflects a motion through the body's sagittal plane (x -> -x) and swaps
/// left/right joint channels. With a symmetric skeleton the FK output is the
/// mirrored pose with left and right joints exchanged.
pub fn mirror_motion(motion: &Motion, skeleton: &Skeleton) -> Result<Motion> {
    let pairs = skeleton.mirror_pairs();
    let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    // Foot channel order is (left foot, right foot, left toe, right toe).
    const CONTACT_SWAP: [usize; NUM_CONTACTS] = [1, 0, 3, 2];
    let mut out = motion.clone();
    for s in 0..motion.len() {
        for j in 0..NUM_JOINTS {
            let m = rot6d_to_matrix(&motion.rotation(s, pairs[j]))?;
            out.set_rotation_matrix(s, j, &(flip * m * flip))?;
        }
        let c = motion.contacts(s);
        for (k, &src) in CONTACT_SWAP.iter().enumerate() {
            out.frames[s][CONTACT_OFFSET + k] = c[src];
        }
        let r = motion.root(s);
        out.set_root(s, Vector3::new(-r.x, r.y, r.z));
    }
    Ok(out)
}
