use super::fk::JointPositions;
use super::Skeleton;

/// Default up-axis speed (meters/frame) below which a foot counts as planted.
pub const DEFAULT_CONTACT_VELOCITY: f64 = 0.01;

/// Binary contact labels for the skeleton's four foot joints.
///
/// Frame `s` is in contact for foot `k` when the up-axis displacement of that
/// joint between frames `s` and `s + 1` is below `vel_threshold`. The last
/// frame repeats the previous label; a single-frame input is all contact.
pub fn compute_foot_contacts(
    positions: &JointPositions,
    skeleton: &Skeleton,
    vel_threshold: f64,
) -> Vec<[bool; 4]> {
    let n = positions.len();
    let up = skeleton.up_axis;
    let mut labels = Vec::with_capacity(n);
    for s in 0..n.saturating_sub(1) {
        let mut l = [false; 4];
        for (k, &joint) in skeleton.foot_joint_ids.iter().enumerate() {
            let v = positions.joint(s + 1, joint)[up] - positions.joint(s, joint)[up];
            l[k] = v.abs() < vel_threshold;
        }
        labels.push(l);
    }
    match labels.last().copied() {
        Some(last) => labels.push(last),
        None if n == 1 => labels.push([true; 4]),
        None => {}
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::super::{forward_kinematics, Motion, NUM_JOINTS};
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn static_motion_is_all_contact() {
        let sk = Skeleton::canonical();
        let pos = forward_kinematics(&Motion::rest(10, Vector3::new(0.0, 0.95, 0.0), 30.0), &sk).unwrap();
        let labels = compute_foot_contacts(&pos, &sk, DEFAULT_CONTACT_VELOCITY);
        assert_eq!(labels.len(), 10);
        assert!(labels.iter().all(|l| l.iter().all(|&c| c)));
    }

    #[test]
    fn rising_foot_is_not_in_contact() {
        let sk = Skeleton::canonical();
        let mut pos = forward_kinematics(&Motion::rest(5, Vector3::zeros(), 30.0), &sk).unwrap();
        for (s, frame) in pos.frames.iter_mut().enumerate() {
            frame[7].y += 0.05 * s as f64;
        }
        let labels = compute_foot_contacts(&pos, &sk, 0.01);
        for l in &labels {
            assert_eq!(l, &[false, true, true, true]);
        }
    }

    #[test]
    fn scale_consistent() {
        let sk = Skeleton::canonical();
        let mut pos = forward_kinematics(&Motion::rest(20, Vector3::zeros(), 30.0), &sk).unwrap();
        for (s, frame) in pos.frames.iter_mut().enumerate() {
            for j in 0..NUM_JOINTS {
                frame[j].y += 0.013 * ((s as f64) * 0.7 + j as f64).sin();
            }
        }
        let base = compute_foot_contacts(&pos, &sk, 0.01);
        let scale = 3.7;
        let mut scaled = pos.clone();
        scaled.frames.iter_mut().flatten().for_each(|p| *p *= scale);
        assert_eq!(compute_foot_contacts(&scaled, &sk, 0.01 * scale), base);
    }
}
