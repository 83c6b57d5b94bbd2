//! Motion quality metrics: kinetic and geometric features, Frechet distance,
//! diversity, beat alignment and the foot contact score.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, JointPositions, Motion, Skeleton, NUM_JOINTS};

pub const REPORT_SCHEMA: &str = "report-v1";
pub const KINETIC_DIM: usize = NUM_JOINTS;
pub const GEOMETRIC_DIM: usize = 12;
pub const DEFAULT_BEAT_SIGMA: f64 = 0.1;
/// Minimum spacing of motion beats, in frames.
pub const MIN_BEAT_GAP: usize = 5;

/// Geometric feature names in vector order. Each is the fraction of frames on
/// which the test holds (lengths in meters):
/// - foot ahead: that ankle leads the other along the facing direction by > 0.1
/// - hand high: wrist above the same-side shoulder by > 0.05
/// - knee / elbow bent: joint angle below 120 degrees
/// - foot raised: that ankle above the other by > 0.05
/// - feet wide: horizontal ankle distance exceeds shoulder width
/// - hands apart: wrist distance exceeds twice the shoulder width
pub const GEOMETRIC_FEATURES: [&str; GEOMETRIC_DIM] = [
    "left_foot_ahead",
    "right_foot_ahead",
    "left_hand_high",
    "right_hand_high",
    "left_knee_bent",
    "right_knee_bent",
    "left_elbow_bent",
    "right_elbow_bent",
    "left_foot_raised",
    "right_foot_raised",
    "feet_wide",
    "hands_apart",
];

const AHEAD: f64 = 0.1;
const HIGH: f64 = 0.05;
const RAISED: f64 = 0.05;
const BENT_DEG: f64 = 120.0;

fn joint_id(sk: &Skeleton, name: &str) -> Result<usize> {
    sk.joint_index(name)
        .ok_or_else(|| Error::InvalidSkeleton(format!("missing joint {name}")))
}

/// `log(1 + mean squared speed)` per joint, speeds in m/s from frame differences.
pub fn kinetic_features_from_positions(pos: &JointPositions, fps: f64) -> Result<Vec<f64>> {
    let s = pos.len();
    if s < 2 {
        return Err(Error::TooShort { needed: 2, got: s });
    }
    let nj = pos.frames[0].len();
    Ok((0..nj)
        .map(|j| {
            let ms: f64 = (1..s)
                .map(|i| ((pos.joint(i, j) - pos.joint(i - 1, j)) * fps).norm_squared())
                .sum::<f64>()
                / (s - 1) as f64;
            ms.ln_1p()
        })
        .collect())
}

pub fn kinetic_features(motion: &Motion, skeleton: &Skeleton) -> Result<Vec<f64>> {
    kinetic_features_from_positions(&forward_kinematics(motion, skeleton)?, motion.fps)
}

fn angle_deg(a: Vector3<f64>, center: Vector3<f64>, b: Vector3<f64>) -> f64 {
    let (u, v) = (a - center, b - center);
    let c = u.dot(&v) / (u.norm() * v.norm()).max(1e-12);
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Fraction of frames on which each relational test in `GEOMETRIC_FEATURES` holds.
pub fn geometric_features_from_positions(pos: &JointPositions, skeleton: &Skeleton) -> Result<Vec<f64>> {
    let id = |n: &str| joint_id(skeleton, n);
    let (lhip, rhip) = (id("left_hip")?, id("right_hip")?);
    let (lknee, rknee) = (id("left_knee")?, id("right_knee")?);
    let (lank, rank) = (id("left_ankle")?, id("right_ankle")?);
    let (lsh, rsh) = (id("left_shoulder")?, id("right_shoulder")?);
    let (lel, rel) = (id("left_elbow")?, id("right_elbow")?);
    let (lwr, rwr) = (id("left_wrist")?, id("right_wrist")?);
    let up = skeleton.up_axis;
    let mut up_v = Vector3::zeros();
    up_v[up] = 1.0;
    let horizontal = |v: Vector3<f64>| v - up_v * v[up];
    let mut counts = [0usize; GEOMETRIC_DIM];
    for s in 0..pos.len() {
        let p = |j: usize| pos.joint(s, j);
        let facing = horizontal((p(lhip) - p(rhip)).cross(&up_v));
        let facing = if facing.norm() > 1e-9 { facing.normalize() } else { facing };
        let shoulder_w = (p(lsh) - p(rsh)).norm();
        let ahead = (p(lank) - p(rank)).dot(&facing);
        let tests = [
            ahead > AHEAD,
            -ahead > AHEAD,
            p(lwr)[up] > p(lsh)[up] + HIGH,
            p(rwr)[up] > p(rsh)[up] + HIGH,
            angle_deg(p(lhip), p(lknee), p(lank)) < BENT_DEG,
            angle_deg(p(rhip), p(rknee), p(rank)) < BENT_DEG,
            angle_deg(p(lsh), p(lel), p(lwr)) < BENT_DEG,
            angle_deg(p(rsh), p(rel), p(rwr)) < BENT_DEG,
            p(lank)[up] > p(rank)[up] + RAISED,
            p(rank)[up] > p(lank)[up] + RAISED,
            horizontal(p(lank) - p(rank)).norm() > shoulder_w,
            (p(lwr) - p(rwr)).norm() > 2.0 * shoulder_w,
        ];
        for (c, t) in counts.iter_mut().zip(tests) {
            *c += t as usize;
        }
    }
    let n = pos.len().max(1) as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

pub fn geometric_features(motion: &Motion, skeleton: &Skeleton) -> Result<Vec<f64>> {
    geometric_features_from_positions(&forward_kinematics(motion, skeleton)?, skeleton)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

const EIGEN_CLAMP: f64 = 1e-8;
const SQRT_CLAMP: f64 = 1e-6;

/// Sample mean and unbiased covariance; tiny negative eigenvalues are clamped to 0.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::TooFew { needed: 2, got: n });
    }
    let d = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::DimMismatch(f.len(), d));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    let eig = cov.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let cov = if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        if eig.eigenvalues.iter().any(|&l| l < -EIGEN_CLAMP * scale) {
            return Err(Error::NumericalFailure("covariance has a negative eigenvalue".into()));
        }
        let l = eig.eigenvalues.map(|l| l.max(0.0));
        &eig.eigenvectors * DMatrix::from_diagonal(&l) * eig.eigenvectors.transpose()
    } else {
        cov
    };
    Ok(GaussianStats { mean, cov, count: n })
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -SQRT_CLAMP * scale) {
        return Err(Error::NumericalFailure("matrix square root of an indefinite matrix".into()));
    }
    let l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&l) * eig.eigenvectors.transpose())
}

/// Frechet distance between two Gaussians. `tr((Sa Sb)^(1/2))` is computed
/// as `tr((Sa^(1/2) Sb Sa^(1/2))^(1/2))`, which has the same eigenvalues but
/// is symmetric.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::DimMismatch(a.mean.len(), b.mean.len()));
    }
    let ra = sym_sqrt(&a.cov)?;
    let inner = &ra * &b.cov * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sym_sqrt(&inner)?.trace();
    let d = (&a.mean - &b.mean).norm_squared();
    Ok((d + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// Mean Euclidean distance over unordered pairs.
pub fn diversity(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::TooFew { needed: 2, got: n });
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if features[i].len() != features[j].len() {
                return Err(Error::DimMismatch(features[i].len(), features[j].len()));
            }
            total += features[i].iter().zip(&features[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Beat timestamps in seconds, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatTrack {
    pub beats: Vec<f64>,
}

impl BeatTrack {
    pub fn new(beats: Vec<f64>) -> Result<Self> {
        if beats.iter().any(|b| !b.is_finite() || *b < 0.0) || beats.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Schema("beat times must be nonnegative and strictly increasing".into()));
        }
        Ok(Self { beats })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: BeatTrack = serde_json::from_str(&text)?;
        Self::new(t.beats)
    }
}

/// Mean joint speed per frame by central differences; entries 0 and S-1 are
/// copies of their neighbours.
fn mean_joint_speed(pos: &JointPositions) -> Vec<f64> {
    let s = pos.len();
    let nj = pos.frames[0].len();
    let mut v: Vec<f64> = (1..s - 1)
        .map(|i| (0..nj).map(|j| (pos.joint(i + 1, j) - pos.joint(i - 1, j)).norm() * 0.5).sum::<f64>() / nj as f64)
        .collect();
    v.insert(0, v[0]);
    v.push(v[v.len() - 1]);
    v
}

/// Strict local minima of mean joint speed that lie below its median, at
/// least `MIN_BEAT_GAP` frames apart (slower minima win).
pub fn extract_motion_beats_from_positions(pos: &JointPositions, fps: f64) -> Result<BeatTrack> {
    let s = pos.len();
    if s < 3 {
        return Err(Error::TooShort { needed: 3, got: s });
    }
    let speed = mean_joint_speed(pos);
    let mut sorted = speed.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if s % 2 == 1 {
        sorted[s / 2]
    } else {
        0.5 * (sorted[s / 2 - 1] + sorted[s / 2])
    };
    // Differences at rounding level are not minima.
    let tol = 1e-9 * sorted[s - 1];
    let mut minima: Vec<usize> = (1..s - 1)
        .filter(|&i| speed[i] + tol < speed[i - 1] && speed[i] + tol < speed[i + 1] && speed[i] + tol < median)
        .collect();
    minima.sort_by(|&a, &b| speed[a].total_cmp(&speed[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in minima {
        if kept.iter().all(|&k| k.abs_diff(i) >= MIN_BEAT_GAP) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    BeatTrack::new(kept.iter().map(|&i| i as f64 / fps).collect())
}

pub fn extract_motion_beats(motion: &Motion, skeleton: &Skeleton) -> Result<BeatTrack> {
    extract_motion_beats_from_positions(&forward_kinematics(motion, skeleton)?, motion.fps)
}

fn nearest_gap(t: f64, track: &BeatTrack) -> f64 {
    track.beats.iter().map(|m| (t - m).abs()).fold(f64::INFINITY, f64::min)
}

/// Mean over music beats of `exp(-d^2 / 2 sigma^2)`, with `d` the distance to
/// the nearest motion beat. No motion beats scores 0.
pub fn beat_align(music: &BeatTrack, motion: &BeatTrack, sigma: f64) -> Result<f64> {
    if music.beats.is_empty() {
        return Err(Error::EmptyMusic);
    }
    if motion.beats.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = music
        .beats
        .iter()
        .map(|&b| (-nearest_gap(b, motion).powi(2) / (2.0 * sigma * sigma)).exp())
        .sum();
    Ok(total / music.beats.len() as f64)
}

/// Mean distance in seconds from each music beat to the nearest motion beat.
pub fn beat_discrepancy(music: &BeatTrack, motion: &BeatTrack) -> Result<Option<f64>> {
    if music.beats.is_empty() {
        return Err(Error::EmptyMusic);
    }
    if motion.beats.is_empty() {
        return Ok(None);
    }
    Ok(Some(music.beats.iter().map(|&b| nearest_gap(b, motion)).sum::<f64>() / music.beats.len() as f64))
}

/// Foot contact score on positions, per-frame units. For interior frames,
/// `s_i = |a_i| * min(|v_i^L|, |v_i^R|)` where `a` is the root acceleration
/// with its downward component zeroed and `v` the forward difference of the
/// left/right foot joints; the mean of `s_i` is divided by `max_i |a_i|`.
pub fn pfc_from_positions(pos: &JointPositions, skeleton: &Skeleton) -> Result<f64> {
    let s = pos.len();
    if s < 3 {
        return Err(Error::TooShort { needed: 3, got: s });
    }
    let lf = joint_id(skeleton, "left_foot")?;
    let rf = joint_id(skeleton, "right_foot")?;
    let up = skeleton.up_axis;
    let mut acc = Vec::with_capacity(s - 2);
    let mut scores = Vec::with_capacity(s - 2);
    for i in 1..s - 1 {
        let mut a = pos.joint(i + 1, 0) - 2.0 * pos.joint(i, 0) + pos.joint(i - 1, 0);
        a[up] = a[up].max(0.0);
        let vl = (pos.joint(i + 1, lf) - pos.joint(i, lf)).norm();
        let vr = (pos.joint(i + 1, rf) - pos.joint(i, rf)).norm();
        acc.push(a.norm());
        scores.push(a.norm() * vl.min(vr));
    }
    let max_a = acc.iter().cloned().fold(0.0, f64::max);
    if max_a == 0.0 {
        return Ok(0.0);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64 / max_a)
}

pub fn pfc(motion: &Motion, skeleton: &Skeleton) -> Result<f64> {
    pfc_from_positions(&forward_kinematics(motion, skeleton)?, skeleton)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub fid_k: f64,
    pub fid_m: f64,
    pub div_k: f64,
    pub div_m: f64,
    /// Mean beat-align score over generated motions; absent without music.
    pub ba: Option<f64>,
    /// Mean music-to-motion beat distance in seconds, over motions with beats.
    pub ba_discrepancy: Option<f64>,
    pub pfc: f64,
    pub num_generated: usize,
    pub num_reference: usize,
    pub beat_sigma: f64,
    #[serde(default)]
    pub provenance: serde_json::Map<String, serde_json::Value>,
}

/// Per-motion features, computed once for reuse across metrics.
#[derive(Debug, Clone)]
pub struct MotionFeatures {
    pub kinetic: Vec<f64>,
    pub geometric: Vec<f64>,
    pub beats: BeatTrack,
    pub pfc: f64,
}

pub fn motion_features(motion: &Motion, skeleton: &Skeleton) -> Result<MotionFeatures> {
    let pos = forward_kinematics(motion, skeleton)?;
    Ok(MotionFeatures {
        kinetic: kinetic_features_from_positions(&pos, motion.fps)?,
        geometric: geometric_features_from_positions(&pos, skeleton)?,
        beats: extract_motion_beats_from_positions(&pos, motion.fps)?,
        pfc: pfc_from_positions(&pos, skeleton)?,
    })
}

/// All six metrics of `generated` against `reference`.
pub fn evaluate(
    generated: &[Motion],
    reference: &[Motion],
    music: Option<&BeatTrack>,
    skeleton: &Skeleton,
) -> Result<MetricsReport> {
    let gen: Vec<MotionFeatures> = generated.iter().map(|m| motion_features(m, skeleton)).collect::<Result<_>>()?;
    let rf: Vec<MotionFeatures> = reference.iter().map(|m| motion_features(m, skeleton)).collect::<Result<_>>()?;
    evaluate_features(&gen, &rf, music, DEFAULT_BEAT_SIGMA)
}

pub fn evaluate_features(
    generated: &[MotionFeatures],
    reference: &[MotionFeatures],
    music: Option<&BeatTrack>,
    sigma: f64,
) -> Result<MetricsReport> {
    let k = |set: &[MotionFeatures]| set.iter().map(|f| f.kinetic.clone()).collect::<Vec<_>>();
    let g = |set: &[MotionFeatures]| set.iter().map(|f| f.geometric.clone()).collect::<Vec<_>>();
    let (gk, gm, rk, rm) = (k(generated), g(generated), k(reference), g(reference));
    let (ba, ba_discrepancy) = match music {
        Some(track) => {
            let mut scores = Vec::with_capacity(generated.len());
            let mut gaps = Vec::new();
            for f in generated {
                scores.push(beat_align(track, &f.beats, sigma)?);
                if let Some(d) = beat_discrepancy(track, &f.beats)? {
                    gaps.push(d);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (Some(mean(&scores)), (!gaps.is_empty()).then(|| mean(&gaps)))
        }
        None => (None, None),
    };
    Ok(MetricsReport {
        schema: REPORT_SCHEMA.to_string(),
        fid_k: fid(&fit_gaussian(&gk)?, &fit_gaussian(&rk)?)?,
        fid_m: fid(&fit_gaussian(&gm)?, &fit_gaussian(&rm)?)?,
        div_k: diversity(&gk)?,
        div_m: diversity(&gm)?,
        ba,
        ba_discrepancy,
        pfc: generated.iter().map(|f| f.pfc).sum::<f64>() / generated.len() as f64,
        num_generated: generated.len(),
        num_reference: reference.len(),
        beat_sigma: sigma,
        provenance: serde_json::Map::new(),
    })
}
