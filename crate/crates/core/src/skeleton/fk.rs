use nalgebra::{Matrix3, Vector3};

use super::motion::{Motion, NUM_JOINTS};
use super::rotation::rot6d_to_matrix;
use super::Skeleton;
use crate::error::{Error, Result};

/// World-space joint positions, one array of 24 points per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub frames: Vec<[Vector3<f64>; NUM_JOINTS]>,
}

impl JointPositions {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint(&self, frame: usize, joint: usize) -> Vector3<f64> {
        self.frames[frame][joint]
    }
}

pub fn forward_kinematics(motion: &Motion, skeleton: &Skeleton) -> Result<JointPositions> {
    Ok(forward_kinematics_with_rotations(motion, skeleton)?.0)
}

/// Positions plus the global rotation of every joint.
pub fn forward_kinematics_with_rotations(
    motion: &Motion,
    skeleton: &Skeleton,
) -> Result<(JointPositions, Vec<[Matrix3<f64>; NUM_JOINTS]>)> {
    if skeleton.num_joints() != NUM_JOINTS {
        return Err(Error::ShapeMismatch(format!(
            "skeleton has {} joints, motion layout has {NUM_JOINTS}",
            skeleton.num_joints()
        )));
    }
    let offsets: Vec<Vector3<f64>> = (0..NUM_JOINTS).map(|j| skeleton.offset(j)).collect();
    let mut positions = Vec::with_capacity(motion.len());
    let mut rotations = Vec::with_capacity(motion.len());
    for s in 0..motion.len() {
        let mut pos = [Vector3::zeros(); NUM_JOINTS];
        let mut glob = [Matrix3::identity(); NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            let local = rot6d_to_matrix(&motion.rotation(s, j))?;
            match skeleton.parent(j) {
                None => {
                    pos[j] = motion.root(s);
                    glob[j] = local;
                }
                Some(p) => {
                    pos[j] = pos[p] + glob[p] * offsets[j];
                    glob[j] = glob[p] * local;
                }
            }
        }
        positions.push(pos);
        rotations.push(glob);
    }
    Ok((JointPositions { frames: positions }, rotations))
}

#[cfg(test)]
mod tests {
    use super::super::rotation::{axis_angle, matrix_to_rot6d, rot_z};
    use super::super::{Motion, CONTACT_OFFSET, MOTION_DIM};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_motion(rng: &mut ChaCha8Rng, frames: usize) -> Motion {
        let mut m = Motion::rest(frames, Vector3::zeros(), 30.0);
        for s in 0..frames {
            for j in 0..NUM_JOINTS {
                // Raw 6D values, not necessarily orthonormal.
                let mut r = [0.0; 6];
                r.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                r[0] += 1.5;
                r[4] += 1.5;
                m.frames[s][j * 6..j * 6 + 6].copy_from_slice(&r);
            }
            let root = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..1.5),
                rng.random_range(-2.0..2.0),
            );
            m.set_root(s, root);
        }
        m
    }

    // Independent recursive formulation: global transform of a joint is composed
    // by walking up the parent chain on demand.
    fn oracle_global(motion: &Motion, sk: &Skeleton, s: usize, j: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let local = rot6d_to_matrix(&motion.rotation(s, j)).unwrap();
        match sk.parent(j) {
            None => (local, motion.root(s)),
            Some(p) => {
                let (gr, gp) = oracle_global(motion, sk, s, p);
                (gr * local, gp + gr * sk.offset(j))
            }
        }
    }

    #[test]
    fn rest_pose_gives_cumulative_offsets() {
        let sk = Skeleton::canonical();
        let m = Motion::rest(2, Vector3::zeros(), 30.0);
        let pos = forward_kinematics(&m, &sk).unwrap();
        for j in 0..NUM_JOINTS {
            let mut expect = Vector3::zeros();
            let mut k = j;
            while let Some(p) = sk.parent(k) {
                expect += sk.offset(k);
                k = p;
            }
            assert!((pos.joint(1, j) - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn rotated_two_bone_chain() {
        // Joints 1 and 2 form a chain along +X with unit bones; the rest hang off the root.
        let mut sk = Skeleton::canonical();
        sk.parents = (0..NUM_JOINTS as i32).map(|j| if j == 0 { -1 } else if j == 2 { 1 } else { 0 }).collect();
        sk.rest_offsets = vec![[0.0, 0.1, 0.0]; NUM_JOINTS];
        sk.rest_offsets[0] = [0.0; 3];
        sk.rest_offsets[1] = [1.0, 0.0, 0.0];
        sk.rest_offsets[2] = [1.0, 0.0, 0.0];
        sk.validate().unwrap();
        let mut m = Motion::rest(1, Vector3::zeros(), 30.0);
        m.set_rotation_matrix(0, 0, &rot_z(std::f64::consts::FRAC_PI_2)).unwrap();
        let pos = forward_kinematics(&m, &sk).unwrap();
        assert!((pos.joint(0, 2) - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn matches_recursive_oracle_and_preserves_bone_lengths() {
        let sk = Skeleton::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_motion(&mut rng, 40);
        let pos = forward_kinematics(&m, &sk).unwrap();
        for s in 0..m.len() {
            assert_eq!(pos.joint(s, 0), m.root(s));
            for j in 0..NUM_JOINTS {
                let (_, p) = oracle_global(&m, &sk, s, j);
                assert!((pos.joint(s, j) - p).norm() < 1e-12);
                if let Some(par) = sk.parent(j) {
                    let len = (pos.joint(s, j) - pos.joint(s, par)).norm();
                    let rest = sk.offset(j).norm();
                    assert!(((len - rest) / rest).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn global_rotation_equivariance() {
        let sk = Skeleton::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_motion(&mut rng, 10);
        let q = axis_angle(Vector3::new(0.3, -1.0, 0.4), 1.1);
        let mut rotated = m.clone();
        for s in 0..m.len() {
            let r0 = rot6d_to_matrix(&m.rotation(s, 0)).unwrap();
            rotated.set_rotation(s, 0, matrix_to_rot6d(&(q * r0)).unwrap());
            rotated.set_root(s, q * m.root(s));
        }
        let a = forward_kinematics(&m, &sk).unwrap();
        let b = forward_kinematics(&rotated, &sk).unwrap();
        for s in 0..m.len() {
            for j in 0..NUM_JOINTS {
                assert!((q * a.joint(s, j) - b.joint(s, j)).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn contacts_do_not_enter_fk() {
        let sk = Skeleton::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_motion(&mut rng, 4);
        let mut other = m.clone();
        for f in other.frames.iter_mut() {
            f[CONTACT_OFFSET..CONTACT_OFFSET + 4].copy_from_slice(&[0.3, -7.0, 2.0, 9.0]);
        }
        assert_eq!(forward_kinematics(&m, &sk).unwrap(), forward_kinematics(&other, &sk).unwrap());
        assert_eq!(other.frames[0].len(), MOTION_DIM);
    }

    #[test]
    fn degenerate_rotation_propagates() {
        let sk = Skeleton::canonical();
        let mut m = Motion::rest(2, Vector3::zeros(), 30.0);
        m.frames[1][12..18].copy_from_slice(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(forward_kinematics(&m, &sk), Err(Error::DegenerateRotation(_))));
    }
}
