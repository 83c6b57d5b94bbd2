//! Procedural motion generator.
//!
//! Motions are built in joint-rotation space from a handful of seeded
//! parameters. Planted feet are solved with two-link leg IK so stance phases
//! are exactly static, which makes the generator's own metadata (stance
//! phases, beat times, periods) usable as ground truth in tests.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{
    compute_foot_contacts, forward_kinematics, matrix_to_rot6d, rot_x, rot_y, rot_z, Motion,
    Skeleton, CONTACT_OFFSET, DEFAULT_CONTACT_VELOCITY, MOTION_DIM, NUM_JOINTS,
};

pub const SYNTH_FPS: f64 = 30.0;

// Canonical SMPL joint indices used by the generator.
const PELVIS: usize = 0;
const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE1: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const L_ANKLE: usize = 7;
const R_ANKLE: usize = 8;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

/// Height of the ankle joint when the foot is flat on the ground.
const ANKLE_GROUND: f64 = 0.06;
const ARM_DOWN: f64 = 70.0 * PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Walk,
    Wave,
    Spin,
    Jump,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [MotionKind::Walk, MotionKind::Wave, MotionKind::Spin, MotionKind::Jump];

    pub fn as_str(&self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::Wave => "wave",
            MotionKind::Spin => "spin",
            MotionKind::Jump => "jump",
        }
    }

    fn salt(&self) -> u64 {
        match self {
            MotionKind::Walk => 0x5741_4c4b,
            MotionKind::Wave => 0x5741_5645,
            MotionKind::Spin => 0x5350_494e,
            MotionKind::Jump => 0x4a55_4d50,
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "walk" => Ok(MotionKind::Walk),
            "wave" => Ok(MotionKind::Wave),
            "spin" => Ok(MotionKind::Spin),
            "jump" => Ok(MotionKind::Jump),
            other => Err(Error::Config(format!("unknown motion kind {other:?}"))),
        }
    }
}

/// Ground truth exposed by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub kind: MotionKind,
    pub seed: u64,
    /// Length of one cycle of the dominant periodic component, in frames.
    pub period_frames: f64,
    /// Designed stance phase per frame for (left, right) foot.
    pub stance: Vec<[bool; 2]>,
    /// Fraction of a gait cycle each foot spends in stance.
    pub stance_fraction: f64,
    /// Seconds at which the motion's accents occur (heel strikes, wave turns, landings).
    pub beat_times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthMotion {
    pub motion: Motion,
    pub meta: SynthMeta,
}

/// Per-frame pose description before encoding into the motion layout.
struct PoseBuilder {
    local: [Matrix3<f64>; NUM_JOINTS],
    root: Vector3<f64>,
}

impl PoseBuilder {
    fn new(root: Vector3<f64>) -> Self {
        Self {
            local: [Matrix3::identity(); NUM_JOINTS],
            root,
        }
    }

    fn write(&self, frame: &mut [f64; MOTION_DIM]) {
        for (j, m) in self.local.iter().enumerate() {
            let r = matrix_to_rot6d(m).expect("generator builds proper rotations");
            frame[j * 6..j * 6 + 6].copy_from_slice(&r.0);
        }
        frame[crate::skeleton::ROOT_OFFSET..].copy_from_slice(self.root.as_slice());
    }
}

/// Two-link sagittal-plane leg IK in the pelvis frame.
///
/// Rotations are about the pelvis X axis only, so the lateral coordinate of
/// the target is ignored. The knee bends forward (+Z) and the ankle rotation
/// cancels the chain so the foot stays aligned with the pelvis.
fn leg_ik(sk: &Skeleton, hip: usize, knee: usize, ankle: usize, target: Vector3<f64>) -> [Matrix3<f64>; 3] {
    let h = sk.offset(hip);
    let t = sk.offset(knee);
    let k = sk.offset(ankle);
    let (l1, l2) = (t.y.hypot(t.z), k.y.hypot(k.z));
    let rest1 = t.z.atan2(t.y);
    let rest2 = k.z.atan2(k.y);
    let dy = target.y - h.y;
    let dz = target.z - h.z;
    let dist = dy.hypot(dz).clamp((l1 - l2).abs() + 1e-6, l1 + l2 - 1e-9);
    let theta = dz.atan2(dy);
    let alpha = ((l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist)).clamp(-1.0, 1.0).acos();
    let (ty, tz) = (dist * theta.cos(), dist * theta.sin());
    // Pick the solution whose knee sits forward of the hip-ankle line.
    let knee_forward = |phi: f64| {
        let (ky, kz) = (l1 * phi.cos(), l1 * phi.sin());
        ty * kz - tz * ky
    };
    let phi1 = if knee_forward(theta + alpha) < knee_forward(theta - alpha) {
        theta + alpha
    } else {
        theta - alpha
    };
    let phi2 = (tz - l1 * phi1.sin()).atan2(ty - l1 * phi1.cos());
    let a_hip = phi1 - rest1;
    let a_shank = phi2 - rest2;
    [rot_x(a_hip), rot_x(a_shank - a_hip), rot_x(-a_shank)]
}

fn set_legs(pose: &mut PoseBuilder, sk: &Skeleton, left: Vector3<f64>, right: Vector3<f64>) {
    let [h, k, a] = leg_ik(sk, L_HIP, L_KNEE, L_ANKLE, left);
    pose.local[L_HIP] = h;
    pose.local[L_KNEE] = k;
    pose.local[L_ANKLE] = a;
    let [h, k, a] = leg_ik(sk, R_HIP, R_KNEE, R_ANKLE, right);
    pose.local[R_HIP] = h;
    pose.local[R_KNEE] = k;
    pose.local[R_ANKLE] = a;
}

/// Arms hanging by the sides, swung forward by `left`/`right` radians.
fn set_arms_down(pose: &mut PoseBuilder, left: f64, right: f64) {
    pose.local[L_SHOULDER] = rot_x(-left) * rot_z(-ARM_DOWN);
    pose.local[R_SHOULDER] = rot_x(-right) * rot_z(ARM_DOWN);
}

fn ease(x: f64) -> f64 {
    0.5 * (1.0 - (PI * x).cos())
}

/// Deterministic procedural motion of the given kind; contact channels are
/// labelled from the FK foot velocities.
pub fn synth_motion(kind: MotionKind, seed: u64, length: usize) -> SynthMotion {
    let sk = Skeleton::canonical();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt().rotate_left(17));
    let mut motion = Motion::new(SYNTH_FPS, vec![[0.0; MOTION_DIM]; length]);
    let meta = match kind {
        MotionKind::Walk => walk(&sk, &mut rng, &mut motion, seed),
        MotionKind::Wave => wave(&sk, &mut rng, &mut motion, seed),
        MotionKind::Spin => spin(&sk, &mut rng, &mut motion, seed),
        MotionKind::Jump => jump(&sk, &mut rng, &mut motion, seed),
    };
    if length > 0 {
        let pos = forward_kinematics(&motion, &sk).expect("generated rotations are valid");
        let labels = compute_foot_contacts(&pos, &sk, DEFAULT_CONTACT_VELOCITY);
        for (frame, l) in motion.frames.iter_mut().zip(labels) {
            for k in 0..4 {
                frame[CONTACT_OFFSET + k] = if l[k] { 1.0 } else { 0.0 };
            }
        }
    }
    SynthMotion { motion, meta }
}

fn walk(sk: &Skeleton, rng: &mut ChaCha8Rng, motion: &mut Motion, seed: u64) -> SynthMeta {
    let period = 2 * rng.random_range(15..=20usize);
    let swing_len = 2 * ((0.4 * period as f64) / 2.0).round() as usize;
    let stance_len = period - swing_len;
    let speed = rng.random_range(0.012..0.022);
    let lift = rng.random_range(0.06..0.10);
    let heading = rng.random_range(-PI..PI);
    let arm_amp = rng.random_range(0.2..0.5);
    let hip_drop = 0.74;
    let pelvis_h = ANKLE_GROUND - sk.offset(L_HIP).y + hip_drop;
    let half_stride = speed * stance_len as f64 / 2.0;
    let dir = Vector3::new(heading.sin(), 0.0, heading.cos());
    let yaw = rot_y(heading);
    let phase_offset = [0usize, period / 2];
    let mut stance = Vec::with_capacity(motion.len());
    let mut beats = Vec::new();
    for (f, frame) in motion.frames.iter_mut().enumerate() {
        let root = Vector3::new(0.0, pelvis_h, 0.0) + dir * (speed * f as f64);
        let mut pose = PoseBuilder::new(root);
        pose.local[PELVIS] = yaw;
        let mut targets = [Vector3::zeros(); 2];
        let mut st = [false; 2];
        for side in 0..2 {
            let c = (f + phase_offset[side]) % period;
            let (z, height) = if c < stance_len {
                st[side] = true;
                (half_stride - speed * c as f64, ANKLE_GROUND)
            } else {
                let w = (c - stance_len) as f64 / swing_len as f64;
                let tri = 1.0 - (2.0 * w - 1.0).abs();
                (-half_stride + 2.0 * half_stride * ease(w), ANKLE_GROUND + lift * tri)
            };
            if c == 0 && f > 0 {
                beats.push(f as f64 / SYNTH_FPS);
            }
            targets[side] = Vector3::new(0.0, height - pelvis_h, z);
        }
        set_legs(&mut pose, sk, targets[0], targets[1]);
        let swing = arm_amp * (TAU * f as f64 / period as f64).sin();
        set_arms_down(&mut pose, swing, -swing);
        pose.local[SPINE1] = rot_y(0.3 * swing);
        pose.write(frame);
        stance.push(st);
    }
    SynthMeta {
        kind: MotionKind::Walk,
        seed,
        period_frames: period as f64,
        stance,
        stance_fraction: stance_len as f64 / period as f64,
        beat_times: beats,
    }
}

fn wave(sk: &Skeleton, rng: &mut ChaCha8Rng, motion: &mut Motion, seed: u64) -> SynthMeta {
    let period = rng.random_range(20..=40usize) as f64;
    let heading = rng.random_range(-PI..PI);
    let raise = rng.random_range(40.0f64..70.0).to_radians();
    let amp = rng.random_range(25.0f64..40.0).to_radians();
    let left_hand = rng.random_bool(0.5);
    let root = Vector3::new(0.0, sk.rest_root_height(), 0.0);
    let mut beats = Vec::new();
    let n = motion.len();
    for (f, frame) in motion.frames.iter_mut().enumerate() {
        let mut pose = PoseBuilder::new(root);
        pose.local[PELVIS] = rot_y(heading);
        let phase = TAU * f as f64 / period;
        let bend = 50f64.to_radians() + amp * phase.sin();
        let sway = 0.05 * phase.sin();
        if left_hand {
            pose.local[L_SHOULDER] = rot_z(raise);
            pose.local[L_ELBOW] = rot_z(bend);
            pose.local[R_SHOULDER] = rot_x(sway) * rot_z(ARM_DOWN);
        } else {
            pose.local[R_SHOULDER] = rot_z(-raise);
            pose.local[R_ELBOW] = rot_z(-bend);
            pose.local[L_SHOULDER] = rot_x(sway) * rot_z(-ARM_DOWN);
        }
        pose.write(frame);
    }
    // Elbow turning points: phase = pi/2 + k*pi.
    let mut k = 0.0;
    loop {
        let f = period * (0.25 + 0.5 * k);
        if f >= n as f64 {
            break;
        }
        beats.push(f / SYNTH_FPS);
        k += 1.0;
    }
    SynthMeta {
        kind: MotionKind::Wave,
        seed,
        period_frames: period,
        stance: vec![[true; 2]; n],
        stance_fraction: 1.0,
        beat_times: beats,
    }
}

fn spin(sk: &Skeleton, rng: &mut ChaCha8Rng, motion: &mut Motion, seed: u64) -> SynthMeta {
    let period = rng.random_range(45.0..80.0);
    let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let omega = direction * TAU / period;
    let heading = rng.random_range(-PI..PI);
    let arm_lift = rng.random_range(-10.0f64..20.0).to_radians();
    let root = Vector3::new(0.0, sk.rest_root_height(), 0.0);
    let n = motion.len();
    for (f, frame) in motion.frames.iter_mut().enumerate() {
        let mut pose = PoseBuilder::new(root);
        pose.local[PELVIS] = rot_y(heading + omega * f as f64);
        pose.local[L_SHOULDER] = rot_z(arm_lift);
        pose.local[R_SHOULDER] = rot_z(-arm_lift);
        pose.local[L_ELBOW] = rot_y(0.3);
        pose.local[R_ELBOW] = rot_y(-0.3);
        pose.write(frame);
    }
    let half = period / 2.0;
    let beats = (1..).map(|k| k as f64 * half).take_while(|&f| f < n as f64).map(|f| f / SYNTH_FPS).collect();
    SynthMeta {
        kind: MotionKind::Spin,
        seed,
        period_frames: period,
        stance: vec![[true; 2]; n],
        stance_fraction: 1.0,
        beat_times: beats,
    }
}

fn jump(sk: &Skeleton, rng: &mut ChaCha8Rng, motion: &mut Motion, seed: u64) -> SynthMeta {
    let period = rng.random_range(36..=50usize);
    let flight = rng.random_range(10..=14usize);
    let ground = period - flight;
    let crouch = rng.random_range(0.10..0.20);
    let peak = rng.random_range(0.12..0.22);
    let heading = rng.random_range(-PI..PI);
    let reach = 0.79;
    let stand_h = ANKLE_GROUND - sk.offset(L_HIP).y + reach;
    let mut stance = Vec::with_capacity(motion.len());
    let mut beats = Vec::new();
    for (f, frame) in motion.frames.iter_mut().enumerate() {
        let c = f % period;
        let (h, on_ground, arms) = if c < ground {
            let s = (PI * c as f64 / ground as f64).sin();
            (stand_h - crouch * s * s, true, -0.3 * s)
        } else {
            let tau = (c - ground) as f64 / flight as f64;
            (stand_h + 4.0 * peak * tau * (1.0 - tau), false, 2.2 * (PI * tau).sin())
        };
        if c == 0 && f > 0 {
            beats.push(f as f64 / SYNTH_FPS);
        }
        let mut pose = PoseBuilder::new(Vector3::new(0.0, h, 0.0));
        pose.local[PELVIS] = rot_y(heading);
        let ankle_y = if on_ground { ANKLE_GROUND - h } else { -(reach - sk.offset(L_HIP).y) };
        let target = Vector3::new(0.0, ankle_y, 0.0);
        set_legs(&mut pose, sk, target, target);
        set_arms_down(&mut pose, arms, arms);
        pose.write(frame);
        stance.push([on_ground; 2]);
    }
    SynthMeta {
        kind: MotionKind::Jump,
        seed,
        period_frames: period as f64,
        stance,
        stance_fraction: ground as f64 / period as f64,
        beat_times: beats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{rot6d_to_matrix, yaw_of};

    #[test]
    fn deterministic_per_seed() {
        for kind in MotionKind::ALL {
            let a = synth_motion(kind, 7, 150);
            let b = synth_motion(kind, 7, 150);
            let bits = |m: &Motion| m.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.motion), bits(&b.motion));
            assert_eq!(a.meta, b.meta);
            assert_ne!(bits(&a.motion), bits(&synth_motion(kind, 8, 150).motion));
        }
    }

    #[test]
    fn contact_channels_are_binary() {
        for kind in MotionKind::ALL {
            let m = synth_motion(kind, 1, 150).motion;
            assert!(m.frames.iter().all(|f| f[CONTACT_OFFSET..CONTACT_OFFSET + 4]
                .iter()
                .all(|&c| c == 0.0 || c == 1.0)));
        }
    }

    #[test]
    fn spin_keeps_root_and_turns_monotonically() {
        let m = synth_motion(MotionKind::Spin, 3, 150).motion;
        let mut dir = 0.0;
        for s in 1..m.len() {
            assert_eq!(m.root(s), m.root(0));
            let a = yaw_of(&rot6d_to_matrix(&m.rotation(s - 1, 0)).unwrap());
            let b = yaw_of(&rot6d_to_matrix(&m.rotation(s, 0)).unwrap());
            let d = (b - a + PI).rem_euclid(TAU) - PI;
            assert!(d.abs() > 1e-3);
            if dir == 0.0 {
                dir = d.signum();
            }
            assert_eq!(d.signum(), dir);
        }
    }

    #[test]
    fn walk_stance_feet_are_planted() {
        let sk = Skeleton::canonical();
        let w = synth_motion(MotionKind::Walk, 5, 150);
        let pos = forward_kinematics(&w.motion, &sk).unwrap();
        for s in 0..w.motion.len() - 1 {
            for (side, joint) in [L_ANKLE, R_ANKLE].into_iter().enumerate() {
                if w.meta.stance[s][side] && w.meta.stance[s + 1][side] {
                    let d = pos.joint(s + 1, joint) - pos.joint(s, joint);
                    assert!(d.norm() < 1e-9, "frame {s} side {side} slid {}", d.norm());
                    assert!((pos.joint(s, joint).y - ANKLE_GROUND).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn walk_contacts_alternate_with_declared_duty_cycle() {
        let w = synth_motion(MotionKind::Walk, 11, 150);
        let n = w.motion.len();
        let p = w.meta.period_frames as usize;
        for side in 0..2 {
            let contact = (0..n).filter(|&s| w.motion.frames[s][CONTACT_OFFSET + side] == 1.0).count();
            let duty = contact as f64 / n as f64;
            assert!(
                (duty - w.meta.stance_fraction).abs() <= 2.0 / p as f64 + 1.0 / n as f64,
                "duty {duty} vs stance {}",
                w.meta.stance_fraction
            );
            let agree = (0..n)
                .filter(|&s| (w.motion.frames[s][CONTACT_OFFSET + side] == 1.0) == w.meta.stance[s][side])
                .count();
            assert!(agree as f64 / n as f64 > 0.9);
        }
        // Left and right patterns are the same cycle shifted by half a period.
        for s in 0..n - p / 2 {
            assert_eq!(
                w.motion.frames[s][CONTACT_OFFSET],
                w.motion.frames[s + p / 2][CONTACT_OFFSET + 1]
            );
        }
    }

    #[test]
    fn walk_foot_height_period_matches_metadata() {
        let sk = Skeleton::canonical();
        let w = synth_motion(MotionKind::Walk, 21, 150);
        let pos = forward_kinematics(&w.motion, &sk).unwrap();
        let h: Vec<f64> = (0..150).map(|s| pos.joint(s, L_ANKLE).y).collect();
        let peaks: Vec<usize> = (1..149).filter(|&s| h[s] > h[s - 1] && h[s] >= h[s + 1] && h[s] > ANKLE_GROUND + 0.01).collect();
        assert!(peaks.len() >= 3);
        let mean_gap = (peaks[peaks.len() - 1] - peaks[0]) as f64 / (peaks.len() - 1) as f64;
        assert!((mean_gap - w.meta.period_frames).abs() <= 1.0, "{mean_gap} vs {}", w.meta.period_frames);
    }

    #[test]
    fn wave_and_spin_feet_stay_in_contact() {
        for kind in [MotionKind::Wave, MotionKind::Spin] {
            let m = synth_motion(kind, 2, 90).motion;
            assert!(m.frames.iter().all(|f| f[CONTACT_OFFSET..CONTACT_OFFSET + 4] == [1.0; 4]));
        }
    }

    #[test]
    fn jump_leaves_the_ground() {
        let j = synth_motion(MotionKind::Jump, 4, 150);
        let airborne = j.meta.stance.iter().filter(|s| !s[0]).count();
        assert!(airborne > 10);
        let no_contact = j.motion.frames.iter().filter(|f| f[CONTACT_OFFSET] == 0.0).count();
        assert!(no_contact > 10);
        assert!(!j.meta.beat_times.is_empty());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("spin".parse::<MotionKind>().unwrap(), MotionKind::Spin);
        assert!("moonwalk".parse::<MotionKind>().is_err());
    }
}
