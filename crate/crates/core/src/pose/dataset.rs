use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::camera::{render_views, CameraTrack, CameraTrackFile, OcclusionModel};
use super::synth::{synth_motion, MotionKind};
use super::{load_pose_json, Pose2DSequence};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::skeleton::{Motion, Skeleton};

pub const MANIFEST_SCHEMA: &str = "manifest-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kinds: Vec<MotionKind>,
    pub num_motions: usize,
    pub views: usize,
    pub length: usize,
    pub seed: u64,
    /// Kinds that go to the test split.
    #[serde(default)]
    pub holdout: Vec<MotionKind>,
    pub occlusion: OcclusionModel,
    pub moving_camera: bool,
    pub cut_probability: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kinds: MotionKind::ALL.to_vec(),
            num_motions: 8,
            views: 4,
            length: 150,
            seed: 0,
            holdout: Vec::new(),
            occlusion: OcclusionModel::with_rate(0.05),
            moving_camera: true,
            cut_probability: 0.1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Config("dataset needs at least one motion kind".into()));
        }
        if self.views == 0 {
            return Err(Error::Config("dataset needs at least one view".into()));
        }
        if self.length < 2 {
            return Err(Error::Config(format!("motion length {} too short", self.length)));
        }
        if !(0.0..=1.0).contains(&self.cut_probability) {
            return Err(Error::Config("cut probability outside [0, 1]".into()));
        }
        self.occlusion.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub motion: String,
    pub poses: Vec<String>,
    pub camera: String,
    pub seed: u64,
    pub kind: MotionKind,
    pub split: Split,
}

/// Index of a generated dataset. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema: String,
    pub config: DatasetConfig,
    pub samples: Vec<ManifestSample>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &ManifestSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn load_motion(&self, sample: &ManifestSample) -> Result<Motion> {
        Motion::load(self.path_of(&sample.motion))
    }

    pub fn load_view(&self, sample: &ManifestSample, view: usize) -> Result<Pose2DSequence> {
        let rel = sample.poses.get(view).ok_or_else(|| {
            Error::OutOfRange(format!("view {view} of {}", sample.poses.len()))
        })?;
        load_pose_json(self.path_of(rel))
    }
}

/// Generates `num_motions` synthetic motions, each rendered from `views` cameras,
/// and writes them with a `manifest.json` under `out_dir`.
pub fn build_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out = out_dir.as_ref();
    for sub in ["motions", "poses", "cameras"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let skeleton = Skeleton::canonical();
    let mut samples = Vec::with_capacity(config.num_motions);
    for i in 0..config.num_motions {
        let kind = config.kinds[i % config.kinds.len()];
        let seed = derive_seed(config.seed, i as u64);
        let synth = synth_motion(kind, seed, config.length);
        let roots: Vec<_> = (0..synth.motion.len()).map(|s| synth.motion.root(s)).collect();
        let mut rng = stream_rng(seed, 1);
        let cameras: Vec<CameraTrack> = (0..config.views)
            .map(|_| CameraTrack::casual(&roots, &mut rng, config.moving_camera, config.cut_probability))
            .collect();
        let views = render_views(&synth.motion, &skeleton, &cameras, &config.occlusion, derive_seed(seed, 2))?;

        let stem = format!("{i:04}_{kind}");
        let motion_rel = format!("motions/{stem}.json");
        synth.motion.save(out.join(&motion_rel))?;
        let camera_rel = format!("cameras/{stem}.json");
        CameraTrackFile::new(cameras).save(out.join(&camera_rel))?;
        let mut poses = Vec::with_capacity(views.len());
        for (v, view) in views.iter().enumerate() {
            let rel = format!("poses/{stem}_v{v}.json");
            view.save(out.join(&rel))?;
            poses.push(rel);
        }
        let split = if config.holdout.contains(&kind) {
            Split::Test
        } else {
            Split::Train
        };
        samples.push(ManifestSample {
            motion: motion_rel,
            poses,
            camera: camera_rel,
            seed,
            kind,
            split,
        });
    }
    let manifest = DatasetManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        config: config.clone(),
        samples,
        root: out.to_path_buf(),
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a manifest and checks that every referenced file exists and that
/// sample seeds are unique.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(Error::Schema(format!("manifest schema {:?}", manifest.schema)));
    }
    manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut seeds = HashSet::new();
    for s in &manifest.samples {
        if !seeds.insert(s.seed) {
            return Err(Error::Schema(format!("duplicate sample seed {}", s.seed)));
        }
        for rel in std::iter::once(&s.motion).chain(&s.poses).chain(std::iter::once(&s.camera)) {
            let p = manifest.path_of(rel);
            if !p.is_file() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest"),
                ));
            }
        }
    }
    Ok(manifest)
}
