use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Pose2DSequence, PoseFrame, NUM_COCO_JOINTS};
use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics_with_rotations, Motion, Skeleton, NUM_JOINTS};

pub const CAMERA_SCHEMA: &str = "camera-v1";

/// Pinhole camera for one frame. `rotation` maps world to camera coordinates
/// (x right, y down, z forward): `X_cam = R * X_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub focal: f64,
    pub principal: [f64; 2],
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl CameraFrame {
    pub fn identity(focal: f64, principal: [f64; 2]) -> Self {
        Self {
            focal,
            principal,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Camera at `eye` looking at `target` with world +Y drawn upward.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, focal: f64, principal: [f64; 2]) -> Self {
        let f = (target - eye).normalize();
        let mut r = f.cross(&Vector3::y());
        if r.norm() < 1e-9 {
            r = Vector3::x();
        }
        let r = r.normalize();
        let d = f.cross(&r);
        let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        let t = -(rot * eye);
        Self {
            focal,
            principal,
            rotation: matrix_rows(&rot),
            translation: [t.x, t.y, t.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + Vector3::from(self.translation)
    }
}

fn matrix_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

/// Projects a world point; `None` when it lies on or behind the image plane.
pub fn project_point(cam: &CameraFrame, p: &Vector3<f64>) -> Option<[f64; 2]> {
    let c = cam.to_camera(p);
    if c.z <= 0.0 {
        return None;
    }
    Some([
        cam.focal * c.x / c.z + cam.principal[0],
        cam.focal * c.y / c.z + cam.principal[1],
    ])
}

/// Per-frame pinhole cameras with optional hard cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraTrack {
    pub frames: Vec<CameraFrame>,
    #[serde(default)]
    pub cuts: Vec<usize>,
}

impl CameraTrack {
    pub fn fixed(cam: CameraFrame, len: usize) -> Self {
        Self {
            frames: vec![cam; len],
            cuts: Vec::new(),
        }
    }

    /// Handheld-style camera that follows the root: azimuth drifts, distance
    /// breathes, and the aim point lags the subject.
    pub fn tracking(
        roots: &[Vector3<f64>],
        azimuth: f64,
        azimuth_rate: f64,
        elevation: f64,
        distance: f64,
        dolly: f64,
        focal: f64,
        principal: [f64; 2],
    ) -> Self {
        let mut aim = roots.first().copied().unwrap_or_else(Vector3::zeros);
        let frames = roots
            .iter()
            .enumerate()
            .map(|(f, root)| {
                aim += (root - aim) * 0.2;
                let az = azimuth + azimuth_rate * f as f64;
                let dist = distance * (1.0 + dolly * (2.0 * PI * f as f64 / 97.0).sin());
                let target = Vector3::new(aim.x, 0.9, aim.z);
                let eye = target
                    + Vector3::new(
                        dist * elevation.cos() * az.sin(),
                        dist * elevation.sin(),
                        dist * elevation.cos() * az.cos(),
                    );
                CameraFrame::look_at(eye, target, focal, principal)
            })
            .collect();
        Self {
            frames,
            cuts: Vec::new(),
        }
    }

    /// Frames `[at, ..)` are taken from `other`; records a cut at `at`.
    pub fn with_cut(mut self, at: usize, other: &CameraTrack) -> Self {
        let end = self.frames.len().min(other.frames.len());
        if at < end {
            self.frames[at..end].copy_from_slice(&other.frames[at..end]);
            self.cuts.push(at);
            self.cuts.sort_unstable();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (f, cam) in self.frames.iter().enumerate() {
            if !(cam.focal > 0.0) {
                return Err(Error::Config(format!("camera frame {f}: focal length {}", cam.focal)));
            }
            crate::skeleton::check_rotation(&cam.rotation_matrix())
                .map_err(|e| Error::Config(format!("camera frame {f}: {e}")))?;
        }
        Ok(())
    }

    /// Casual-video camera for a motion: tracking with random drift and dolly, and
    /// with probability `cut_prob` a hard cut to an unrelated angle.
    pub fn casual(roots: &[Vector3<f64>], rng: &mut impl Rng, moving: bool, cut_prob: f64) -> Self {
        let az = rng.random_range(-PI..PI);
        let el = rng.random_range(0.0..0.35);
        let dist = rng.random_range(3.5..6.0);
        let (rate, dolly) = if moving {
            (rng.random_range(-0.02..0.02), rng.random_range(0.0..0.25))
        } else {
            (0.0, 0.0)
        };
        let focal = rng.random_range(400.0..700.0);
        let principal = [256.0, 256.0];
        let track = Self::tracking(roots, az, rate, el, dist, dolly, focal, principal);
        if roots.len() > 20 && rng.random_bool(cut_prob.clamp(0.0, 1.0)) {
            let at = rng.random_range(10..roots.len() - 10);
            let other = Self::tracking(
                roots,
                az + rng.random_range(1.0..PI),
                rate,
                rng.random_range(0.0..0.35),
                rng.random_range(3.5..6.0),
                dolly,
                focal,
                principal,
            );
            track.with_cut(at, &other)
        } else {
            track
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraTrackFile {
    pub schema: String,
    pub views: Vec<CameraTrack>,
}

impl CameraTrackFile {
    pub fn new(views: Vec<CameraTrack>) -> Self {
        Self {
            schema: CAMERA_SCHEMA.to_string(),
            views,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text)?;
        if file.schema != CAMERA_SCHEMA {
            return Err(Error::Schema(format!("camera schema {:?}", file.schema)));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

/// How one COCO keypoint is derived from the SMPL skeleton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CocoSource {
    Joint(usize),
    /// `(1 - w) * a + w * b`
    Lerp(usize, usize, f64),
    /// Point fixed in the joint's local frame, in meters.
    Offset(usize, [f64; 3]),
}

const HEAD: usize = 15;

/// SMPL-24 to COCO-17 correspondence, in COCO order. Face points hang off
/// the head joint; hips take a point slightly down the thigh, where COCO
/// annotates the hip.
pub const COCO_FROM_SMPL: [CocoSource; NUM_COCO_JOINTS] = [
    CocoSource::Offset(HEAD, [0.0, 0.02, 0.10]),
    CocoSource::Offset(HEAD, [0.03, 0.05, 0.08]),
    CocoSource::Offset(HEAD, [-0.03, 0.05, 0.08]),
    CocoSource::Offset(HEAD, [0.07, 0.03, 0.0]),
    CocoSource::Offset(HEAD, [-0.07, 0.03, 0.0]),
    CocoSource::Joint(16),
    CocoSource::Joint(17),
    CocoSource::Joint(18),
    CocoSource::Joint(19),
    CocoSource::Joint(20),
    CocoSource::Joint(21),
    CocoSource::Lerp(1, 4, 0.1),
    CocoSource::Lerp(2, 5, 0.1),
    CocoSource::Joint(4),
    CocoSource::Joint(5),
    CocoSource::Joint(7),
    CocoSource::Joint(8),
];

/// World-space COCO keypoints for one frame.
pub fn coco_from_smpl(
    positions: &[Vector3<f64>; NUM_JOINTS],
    rotations: &[Matrix3<f64>; NUM_JOINTS],
) -> [Vector3<f64>; NUM_COCO_JOINTS] {
    let mut out = [Vector3::zeros(); NUM_COCO_JOINTS];
    for (o, src) in out.iter_mut().zip(COCO_FROM_SMPL.iter()) {
        *o = match *src {
            CocoSource::Joint(j) => positions[j],
            CocoSource::Lerp(a, b, w) => positions[a] * (1.0 - w) + positions[b] * w,
            CocoSource::Offset(j, off) => positions[j] + rotations[j] * Vector3::from(off),
        };
    }
    out
}

/// Keypoint dropout in bursts plus confidence jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionModel {
    /// Long-run fraction of frames in which a joint is occluded.
    pub dropout: f64,
    pub burst_mean: f64,
    pub burst_max: usize,
    pub confidence_noise_std: f64,
}

impl OcclusionModel {
    pub fn disabled() -> Self {
        Self {
            dropout: 0.0,
            burst_mean: 1.0,
            burst_max: 1,
            confidence_noise_std: 0.0,
        }
    }

    pub fn with_rate(rate: f64) -> Self {
        Self {
            dropout: rate,
            burst_mean: 6.0,
            burst_max: 15,
            confidence_noise_std: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) && self.dropout != 0.0 {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.burst_max < 1 || !(self.burst_mean >= 1.0) || self.burst_mean > self.burst_max as f64 {
            return Err(Error::Config("burst lengths must satisfy 1 <= mean <= max".into()));
        }
        if !(self.confidence_noise_std >= 0.0) {
            return Err(Error::Config("confidence noise std must be nonnegative".into()));
        }
        Ok(())
    }

    /// Probability per visible frame of starting a burst, chosen so the
    /// stationary occluded fraction equals `dropout`.
    fn start_probability(&self) -> f64 {
        if self.dropout <= 0.0 {
            return 0.0;
        }
        (self.dropout / (self.burst_mean * (1.0 - self.dropout))).min(1.0)
    }

    fn burst_length(&self, rng: &mut impl Rng) -> usize {
        let hi = (2.0 * self.burst_mean - 1.0).round().max(1.0) as usize;
        rng.random_range(1..=hi).min(self.burst_max)
    }
}

/// Projects a motion into one COCO-17 sequence per camera.
///
/// Occluded keypoints and keypoints in frames where the subject is behind the
/// camera get confidence 0 and hold their last visible position.
pub fn render_views(
    motion: &Motion,
    skeleton: &Skeleton,
    cameras: &[CameraTrack],
    occlusion: &OcclusionModel,
    seed: u64,
) -> Result<Vec<Pose2DSequence>> {
    if cameras.is_empty() {
        return Err(Error::Config("render_views needs at least one camera".into()));
    }
    occlusion.validate()?;
    let (positions, rotations) = forward_kinematics_with_rotations(motion, skeleton)?;
    let world: Vec<[Vector3<f64>; NUM_COCO_JOINTS]> = positions
        .frames
        .iter()
        .zip(&rotations)
        .map(|(p, r)| coco_from_smpl(p, r))
        .collect();
    let p_start = occlusion.start_probability();
    let mut views = Vec::with_capacity(cameras.len());
    for (v, track) in cameras.iter().enumerate() {
        if track.frames.len() < motion.len() {
            return Err(Error::LengthMismatch(format!(
                "camera {v} has {} frames, motion has {}",
                track.frames.len(),
                motion.len()
            )));
        }
        track.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, v as u64));
        let noise = Normal::new(0.0, occlusion.confidence_noise_std.max(0.0))
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut remaining = [0usize; NUM_COCO_JOINTS];
        let mut last: [Option<[f64; 2]>; NUM_COCO_JOINTS] = [None; NUM_COCO_JOINTS];
        let mut frames: Vec<PoseFrame> = Vec::with_capacity(motion.len());
        let mut visible_frames = 0;
        for (f, points) in world.iter().enumerate() {
            let cam = &track.frames[f];
            let projected: Option<Vec<[f64; 2]>> = points.iter().map(|p| project_point(cam, p)).collect();
            if projected.is_some() {
                visible_frames += 1;
            }
            let mut frame = [[0.0; 3]; NUM_COCO_JOINTS];
            for j in 0..NUM_COCO_JOINTS {
                let occluded = if remaining[j] > 0 {
                    remaining[j] -= 1;
                    true
                } else if p_start > 0.0 && rng.random_bool(p_start) {
                    remaining[j] = occlusion.burst_length(&mut rng) - 1;
                    true
                } else {
                    false
                };
                let jitter = if occlusion.confidence_noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                match (&projected, occluded) {
                    (Some(pts), false) => {
                        last[j] = Some(pts[j]);
                        frame[j] = [pts[j][0], pts[j][1], (1.0 - jitter.abs()).clamp(0.0, 1.0)];
                    }
                    _ => {
                        // Nothing seen yet: hold the first point that will be projectable.
                        let held = last[j].or_else(|| {
                            world.iter().zip(&track.frames).find_map(|(pts, c)| project_point(c, &pts[j]))
                        });
                        let xy = held.unwrap_or([cam.principal[0], cam.principal[1]]);
                        frame[j] = [xy[0], xy[1], 0.0];
                    }
                }
            }
            frames.push(frame);
        }
        if visible_frames == 0 && !world.is_empty() {
            return Err(Error::BehindCamera { view: v });
        }
        views.push(Pose2DSequence::new(motion.fps, frames));
    }
    Ok(views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::synth::{synth_motion, MotionKind};
    use crate::skeleton::forward_kinematics;

    #[test]
    fn identity_camera_matches_pinhole_formula() {
        let sk = Skeleton::canonical();
        let motion = Motion::rest(4, Vector3::new(0.2, 0.1, 3.0), 30.0);
        let cam = CameraFrame::identity(500.0, [320.0, 240.0]);
        let views = render_views(&motion, &sk, &[CameraTrack::fixed(cam, 4)], &OcclusionModel::disabled(), 1).unwrap();
        let (pos, rot) = forward_kinematics_with_rotations(&motion, &sk).unwrap();
        let world = coco_from_smpl(&pos.frames[0], &rot[0]);
        for &j in &[5usize, 6, 9, 13, 16] {
            let p = world[j];
            let u = 500.0 * p.x / p.z + 320.0;
            let v = 500.0 * p.y / p.z + 240.0;
            let kp = views[0].frames[0][j];
            assert!((kp[0] - u).abs() < 1e-9 && (kp[1] - v).abs() < 1e-9);
        }
    }

    #[test]
    fn no_occlusion_means_full_confidence() {
        let sk = Skeleton::canonical();
        let m = synth_motion(MotionKind::Walk, 2, 60).motion;
        let roots: Vec<_> = (0..m.len()).map(|s| m.root(s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cams: Vec<_> = (0..3).map(|_| CameraTrack::casual(&roots, &mut rng, true, 0.5)).collect();
        let views = render_views(&m, &sk, &cams, &OcclusionModel::disabled(), 9).unwrap();
        assert_eq!(views.len(), 3);
        assert!(views.iter().flat_map(|v| v.frames.iter().flatten()).all(|kp| kp[2] == 1.0));
    }

    #[test]
    fn occlusion_rate_and_frozen_positions() {
        let sk = Skeleton::canonical();
        let m = synth_motion(MotionKind::Walk, 3, 150).motion;
        let roots: Vec<_> = (0..m.len()).map(|s| m.root(s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cams: Vec<_> = (0..8).map(|_| CameraTrack::casual(&roots, &mut rng, true, 0.0)).collect();
        let occ = OcclusionModel::with_rate(0.2);
        let views = render_views(&m, &sk, &cams, &occ, 4).unwrap();
        let total = views.len() * 150 * NUM_COCO_JOINTS;
        let zero = views.iter().flat_map(|v| v.frames.iter().flatten()).filter(|kp| kp[2] == 0.0).count();
        let rate = zero as f64 / total as f64;
        assert!((rate - 0.2).abs() < 0.05, "occluded fraction {rate}");
        for v in &views {
            for s in 1..v.len() {
                for j in 0..NUM_COCO_JOINTS {
                    if v.frames[s][j][2] == 0.0 && v.frames[s - 1][j][2] > 0.0 {
                        assert_eq!(&v.frames[s][j][..2], &v.frames[s - 1][j][..2]);
                    }
                }
            }
        }
        let again = render_views(&m, &sk, &cams, &occ, 4).unwrap();
        assert_eq!(views, again);
    }

    #[test]
    fn hard_cut_jumps_while_motion_is_continuous() {
        let sk = Skeleton::canonical();
        let m = synth_motion(MotionKind::Wave, 1, 150).motion;
        let roots: Vec<_> = (0..m.len()).map(|s| m.root(s)).collect();
        let a = CameraTrack::tracking(&roots, 0.0, 0.0, 0.1, 4.0, 0.0, 500.0, [256.0, 256.0]);
        let b = CameraTrack::tracking(&roots, 2.0, 0.0, 0.3, 5.0, 0.0, 500.0, [256.0, 256.0]);
        let cut = a.with_cut(75, &b);
        assert_eq!(cut.cuts, vec![75]);
        let v = &render_views(&m, &sk, &[cut], &OcclusionModel::disabled(), 0).unwrap()[0];
        let step = |s: usize| (v.frames[s][0][0] - v.frames[s - 1][0][0]).hypot(v.frames[s][0][1] - v.frames[s - 1][0][1]);
        let pos = forward_kinematics(&m, &sk).unwrap();
        let world_step = (pos.joint(75, 15) - pos.joint(74, 15)).norm();
        assert!(world_step < 0.05);
        let max_other = (1..150).filter(|&s| s != 75).map(step).fold(0.0, f64::max);
        assert!(step(75) > 10.0 * max_other.max(1.0), "cut step {} vs {}", step(75), max_other);
    }

    #[test]
    fn behind_camera_frames_are_zero_confidence() {
        let sk = Skeleton::canonical();
        let mut m = Motion::rest(6, Vector3::new(0.0, 0.0, 3.0), 30.0);
        for s in 3..6 {
            m.set_root(s, Vector3::new(0.0, 0.0, -3.0));
        }
        let cam = CameraTrack::fixed(CameraFrame::identity(500.0, [0.0, 0.0]), 6);
        let v = &render_views(&m, &sk, &[cam.clone()], &OcclusionModel::disabled(), 0).unwrap()[0];
        assert!(v.frames[..3].iter().flatten().all(|kp| kp[2] == 1.0));
        assert!(v.frames[3..].iter().flatten().all(|kp| kp[2] == 0.0));
        assert_eq!(v.frames[5][4][..2], v.frames[2][4][..2]);
        let behind = Motion::rest(3, Vector3::new(0.0, 0.0, -3.0), 30.0);
        assert!(matches!(
            render_views(&behind, &sk, &[cam], &OcclusionModel::disabled(), 0),
            Err(Error::BehindCamera { view: 0 })
        ));
    }

    #[test]
    fn mapping_is_total() {
        for src in COCO_FROM_SMPL {
            match src {
                CocoSource::Joint(j) | CocoSource::Offset(j, _) => assert!(j < NUM_JOINTS),
                CocoSource::Lerp(a, b, w) => assert!(a < NUM_JOINTS && b < NUM_JOINTS && (0.0..=1.0).contains(&w)),
            }
        }
    }

    #[test]
    fn look_at_draws_up_as_up() {
        let cam = CameraFrame::look_at(Vector3::new(0.0, 1.0, 5.0), Vector3::new(0.0, 1.0, 0.0), 500.0, [0.0, 0.0]);
        let head = project_point(&cam, &Vector3::new(0.0, 1.7, 0.0)).unwrap();
        let foot = project_point(&cam, &Vector3::new(0.0, 0.0, 0.0)).unwrap();
        assert!(head[1] < foot[1]);
        let right = project_point(&cam, &Vector3::new(0.5, 1.0, 0.0)).unwrap();
        assert!(right[0] > 0.0);
    }
}
