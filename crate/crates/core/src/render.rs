//! Stick-figure rendering of motions to PNG frames.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{project_point, CameraFrame, Pose2DSequence};
use crate::skeleton::{forward_kinematics, Motion, Skeleton};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    #[default]
    Perspective,
    /// Parallel projection with the perspective scale at the camera target.
    Orthographic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overlay {
    pub ground_truth: bool,
    pub condition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSpec {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub width: u32,
    pub height: u32,
    pub stride: usize,
    pub focal: f64,
    pub projection: Projection,
    pub overlay: Overlay,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            azimuth_deg: 30.0,
            elevation_deg: 10.0,
            distance: 5.0,
            width: 256,
            height: 256,
            stride: 1,
            focal: 500.0,
            projection: Projection::Perspective,
            overlay: Overlay::default(),
        }
    }
}

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const LEFT: Rgb<u8> = Rgb([40, 90, 220]);
const RIGHT: Rgb<u8> = Rgb([220, 60, 40]);
const CENTER: Rgb<u8> = Rgb([60, 60, 60]);
const GROUND_TRUTH: Rgb<u8> = Rgb([60, 180, 80]);
pub const CONDITION_COLOR: Rgb<u8> = Rgb([230, 0, 230]);

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("image size {}x{}", self.width, self.height)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(self.distance > 0.0 && self.focal > 0.0) {
            return Err(Error::Config("distance and focal length must be positive".into()));
        }
        if !(self.elevation_deg.abs() < 90.0) {
            return Err(Error::Config(format!("elevation {} outside (-90, 90)", self.elevation_deg)));
        }
        Ok(())
    }

    /// Static camera aimed at the mean root position, at hip height.
    pub fn camera(&self, motion: &Motion) -> CameraFrame {
        let n = motion.len().max(1) as f64;
        let mean = (0..motion.len()).map(|s| motion.root(s)).fold(Vector3::zeros(), |a, r| a + r) / n;
        let target = Vector3::new(mean.x, 0.9, mean.z);
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let eye = target
            + self.distance * Vector3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos());
        CameraFrame::look_at(eye, target, self.focal, [self.width as f64 / 2.0, self.height as f64 / 2.0])
    }

    pub fn project(&self, cam: &CameraFrame, p: &Vector3<f64>) -> Option<[f64; 2]> {
        match self.projection {
            Projection::Perspective => project_point(cam, p),
            Projection::Orthographic => {
                let c = cam.to_camera(p);
                let s = cam.focal / self.distance;
                Some([s * c.x + cam.principal[0], s * c.y + cam.principal[1]])
            }
        }
    }

    pub fn frame_indices(&self, len: usize) -> impl Iterator<Item = usize> {
        (0..len).step_by(self.stride)
    }
}

fn bone_color(name: &str) -> Rgb<u8> {
    if name.starts_with("left") {
        LEFT
    } else if name.starts_with("right") {
        RIGHT
    } else {
        CENTER
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

// Far-off endpoints are skipped rather than clipped.
const MAX_COORD: f64 = 1e5;

fn line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], c: Rgb<u8>) {
    if a.iter().chain(&b).any(|v| !v.is_finite() || v.abs() > MAX_COORD) {
        return;
    }
    let (mut x0, mut y0) = (a[0].round() as i64, a[1].round() as i64);
    let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        put(img, x0 + 1, y0, c);
        put(img, x0, y0 + 1, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

fn cross(img: &mut RgbImage, p: [f64; 2], r: i64, c: Rgb<u8>) {
    if !p.iter().all(|v| v.is_finite() && v.abs() < MAX_COORD) {
        return;
    }
    let (x, y) = (p[0].round() as i64, p[1].round() as i64);
    for d in -r..=r {
        put(img, x + d, y, c);
        put(img, x, y + d, c);
    }
}

fn draw_skeleton(img: &mut RgbImage, pts: &[Option<[f64; 2]>], sk: &Skeleton, solid: Option<Rgb<u8>>) {
    for (j, &parent) in sk.parents.iter().enumerate() {
        if parent < 0 {
            continue;
        }
        if let (Some(a), Some(b)) = (pts[parent as usize], pts[j]) {
            line(img, a, b, solid.unwrap_or_else(|| bone_color(&sk.joint_names[j])));
        }
    }
}

/// Image coordinates of every skeleton joint in every frame.
pub fn project_motion(motion: &Motion, sk: &Skeleton, spec: &RenderSpec) -> Result<Vec<Vec<Option<[f64; 2]>>>> {
    let cam = spec.camera(motion);
    let pos = forward_kinematics(motion, sk)?;
    Ok(pos.frames.iter().map(|f| f.iter().map(|p| spec.project(&cam, p)).collect()).collect())
}

/// Renders every `stride`-th frame. Ground truth is drawn beneath the motion
/// and condition keypoints with nonzero confidence on top.
pub fn render_motion(
    motion: &Motion,
    sk: &Skeleton,
    spec: &RenderSpec,
    ground_truth: Option<&Motion>,
    condition: Option<&Pose2DSequence>,
) -> Result<Vec<(usize, RgbImage)>> {
    spec.validate()?;
    if let Some(gt) = ground_truth {
        if gt.len() < motion.len() {
            return Err(Error::LengthMismatch(format!("ground truth has {} frames, motion {}", gt.len(), motion.len())));
        }
    }
    if let Some(c) = condition {
        if c.len() < motion.len() {
            return Err(Error::LengthMismatch(format!("condition has {} frames, motion {}", c.len(), motion.len())));
        }
    }
    let pts = project_motion(motion, sk, spec)?;
    // Ground truth shares the motion's camera so the two overlay.
    let gt_pts = match ground_truth {
        Some(gt) => {
            let cam = spec.camera(motion);
            let pos = forward_kinematics(gt, sk)?;
            Some(pos.frames.iter().map(|f| f.iter().map(|p| spec.project(&cam, p)).collect::<Vec<_>>()).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut out = Vec::new();
    for s in spec.frame_indices(motion.len()) {
        let mut img = RgbImage::from_pixel(spec.width, spec.height, BACKGROUND);
        if let Some(g) = &gt_pts {
            draw_skeleton(&mut img, &g[s], sk, Some(GROUND_TRUTH));
        }
        draw_skeleton(&mut img, &pts[s], sk, None);
        if let Some(c) = condition {
            for kp in c.frames[s].iter().filter(|kp| kp[2] > 0.0) {
                cross(&mut img, [kp[0], kp[1]], 2, CONDITION_COLOR);
            }
        }
        out.push((s, img));
    }
    Ok(out)
}

/// Writes `frame_NNNNN.png` files named by source frame index.
pub fn write_frames(frames: &[(usize, RgbImage)], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .map(|(s, img)| {
            let path = dir.join(format!("frame_{s:05}.png"));
            img.save(&path)?;
            Ok(path)
        })
        .collect()
}
