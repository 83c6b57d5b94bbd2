//! Skeleton hierarchy, motion layout and forward kinematics.

mod contacts;
mod fk;
mod motion;
mod rotation;

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use contacts::{compute_foot_contacts, DEFAULT_CONTACT_VELOCITY};
pub use fk::{forward_kinematics, forward_kinematics_with_rotations, JointPositions};
pub use motion::{
    mirror_motion, Motion, CONTACT_OFFSET, MOTION_DIM, MOTION_LAYOUT, NUM_CONTACTS, NUM_JOINTS,
    ROOT_OFFSET, ROT_DIM,
};
pub use rotation::{
    axis_angle, check_rotation, matrix_to_rot6d, rot6d_to_matrix, rot_x, rot_y, rot_z, yaw_of,
    Rotation6D, PARALLEL_TOLERANCE, ROTATION_TOLERANCE,
};

pub const SKELETON_SCHEMA: &str = "skeleton-v1";

const CANONICAL_SKELETON: &str = include_str!("../../assets/smpl24_skeleton.json");

/// Joint hierarchy with rest offsets (meters), topologically sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skeleton {
    pub schema: String,
    pub joint_names: Vec<String>,
    pub parents: Vec<i32>,
    pub rest_offsets: Vec<[f64; 3]>,
    /// Left foot, right foot, left toe, right toe.
    pub foot_joint_ids: [usize; 4],
    #[serde(default = "default_up_axis")]
    pub up_axis: usize,
}

fn default_up_axis() -> usize {
    1
}

impl Skeleton {
    /// The shipped 24-joint table in SMPL joint order, symmetric average-body proportions.
    pub fn canonical() -> Self {
        let sk: Skeleton =
            serde_json::from_str(CANONICAL_SKELETON).expect("bundled skeleton asset parses");
        sk.validate().expect("bundled skeleton asset is valid");
        sk
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let sk: Skeleton = serde_json::from_str(text)?;
        sk.validate()?;
        Ok(sk)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn offset(&self, joint: usize) -> Vector3<f64> {
        let o = self.rest_offsets[joint];
        Vector3::new(o[0], o[1], o[2])
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parents[joint];
        (p >= 0).then_some(p as usize)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSkeleton(msg));
        if self.schema != SKELETON_SCHEMA {
            return bad(format!("schema {:?}, expected {SKELETON_SCHEMA:?}", self.schema));
        }
        let n = self.parents.len();
        if n == 0 || self.joint_names.len() != n || self.rest_offsets.len() != n {
            return bad(format!(
                "inconsistent joint counts: {} names, {} parents, {} offsets",
                self.joint_names.len(),
                n,
                self.rest_offsets.len()
            ));
        }
        if self.parents[0] != -1 {
            return bad("joint 0 must be the root".into());
        }
        for (i, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return bad(format!("joint {i} has parent {p}; parents must precede children"));
            }
            if self.offset(i).norm() == 0.0 {
                return bad(format!("joint {i} has a zero-length bone"));
            }
        }
        if self.rest_offsets.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite rest offset".into());
        }
        for (k, &f) in self.foot_joint_ids.iter().enumerate() {
            if f >= n {
                return bad(format!("foot joint {f} out of range"));
            }
            if self.foot_joint_ids[..k].contains(&f) {
                return bad(format!("foot joint {f} repeated"));
            }
        }
        if self.up_axis > 2 {
            return bad(format!("up axis {}", self.up_axis));
        }
        Ok(())
    }

    /// Index of the left/right counterpart of every joint (itself for center joints).
    pub fn mirror_pairs(&self) -> Vec<usize> {
        self.joint_names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let other = if let Some(rest) = name.strip_prefix("left_") {
                    format!("right_{rest}")
                } else if let Some(rest) = name.strip_prefix("right_") {
                    format!("left_{rest}")
                } else {
                    return i;
                };
                self.joint_index(&other).unwrap_or(i)
            })
            .collect()
    }

    /// Root height at which the lowest joint of the rest pose touches the ground.
    pub fn rest_root_height(&self) -> f64 {
        let mut heights = vec![0.0; self.num_joints()];
        let up = self.up_axis;
        for j in 1..self.num_joints() {
            let p = self.parents[j] as usize;
            heights[j] = heights[p] + self.rest_offsets[j][up];
        }
        -heights.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_skeleton_is_valid() {
        let sk = Skeleton::canonical();
        assert_eq!(sk.num_joints(), 24);
        assert_eq!(sk.foot_joint_ids, [7, 8, 10, 11]);
        assert_eq!(sk.up_axis, 1);
    }

    #[test]
    fn canonical_skeleton_is_left_right_symmetric() {
        let sk = Skeleton::canonical();
        let pairs = sk.mirror_pairs();
        for (i, &j) in pairs.iter().enumerate() {
            assert_eq!(pairs[j], i);
            let (a, b) = (sk.offset(i), sk.offset(j));
            assert_eq!(a.x, -b.x);
            assert_eq!(a.y, b.y);
            assert_eq!(a.z, b.z);
        }
        assert_eq!(pairs[7], 8);
        assert_eq!(pairs[0], 0);
    }

    #[test]
    fn rejects_unsorted_parents() {
        let mut sk = Skeleton::canonical();
        sk.parents[4] = 10;
        assert!(matches!(sk.validate(), Err(Error::InvalidSkeleton(_))));
    }

    #[test]
    fn rejects_zero_bone_and_bad_feet() {
        let mut sk = Skeleton::canonical();
        sk.rest_offsets[5] = [0.0; 3];
        assert!(sk.validate().is_err());
        let mut sk = Skeleton::canonical();
        sk.foot_joint_ids = [7, 7, 10, 11];
        assert!(sk.validate().is_err());
        let mut sk = Skeleton::canonical();
        sk.foot_joint_ids = [7, 8, 10, 24];
        assert!(sk.validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let sk = Skeleton::canonical();
        let text = serde_json::to_string(&sk).unwrap();
        assert_eq!(Skeleton::from_json_str(&text).unwrap(), sk);
        assert!(Skeleton::from_json_str(&text.replace("skeleton-v1", "skeleton-v0")).is_err());
    }

    #[test]
    fn rest_root_height_puts_toes_on_ground() {
        let sk = Skeleton::canonical();
        assert!((sk.rest_root_height() - 0.95).abs() < 1e-12);
    }
}
