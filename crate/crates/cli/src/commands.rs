use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use candle_core::{DType, Device, Tensor};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vimo_core::adapter::{beat_features, ZeroConvAdapter, BEAT_FEATURES, DEFAULT_BEAT_WIDTH};
use vimo_core::diffusion::{
    load_beat_windows, load_training_windows, make_schedule, prepare_condition, sample, tensor_to_motions,
    DiffusionModel, DiffusionSchedule, SamplerConfig, ScheduleKind, StepLog, Trainer, TrainingSample,
};
use vimo_core::edit::{complete, EditRequest, MaskSpec};
use vimo_core::metrics::{evaluate_features, motion_features, BeatTrack, MotionFeatures};
use vimo_core::net::{file_hash, pose_features, Checkpoint, Denoiser, RngState, TrainingState, POSE_FEATURES};
use vimo_core::pose::{build_dataset, load_manifest, load_pose_json, DatasetManifest, MotionKind, Split};
use vimo_core::render::{render_motion, write_frames};
use vimo_core::rng::derive_seed;
use vimo_core::skeleton::{Motion, Skeleton};

use crate::config::{
    file_in, optional_path, required_path, CompleteDoc, ConfigError, Conditioning, EvalDoc, Precision, RenderDoc,
    SampleDoc, StylizeDoc, SynthDoc, TrainDoc, DATA_ROOT_ENV,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ADAPTER_FILE: &str = "adapter.bin";
pub const CONFIG_ECHO: &str = "config.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `dir/config.json` for directory outputs, `name.config.json` beside file outputs.
fn echo_path_for_file(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.{CONFIG_ECHO}"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn synth(mut doc: SynthDoc, out: &Path) -> Result<()> {
    doc.dataset.seed = doc.seed;
    doc.dataset.validate()?;
    create_dir(out)?;
    let manifest = build_dataset(&doc.dataset, out)?;
    log::info!("wrote {} motions to {}", manifest.samples.len(), out.display());
    write_json(&out.join(CONFIG_ECHO), &doc)
}

fn filter_kinds(mut manifest: DatasetManifest, kinds: &[MotionKind]) -> DatasetManifest {
    if !kinds.is_empty() {
        manifest.samples.retain(|s| kinds.contains(&s.kind));
    }
    manifest
}

fn dtype_of(p: Precision) -> DType {
    match p {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    }
}

struct TrainLog {
    file: BufWriter<File>,
    start: Instant,
}

impl TrainLog {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            file: BufWriter::new(file),
            start: Instant::now(),
        })
    }

    /// The file holds only deterministic fields; timing goes to the console.
    fn record(&mut self, log: &StepLog) -> std::io::Result<()> {
        let line = json!({ "step": log.step, "epoch": log.epoch, "loss": log.loss });
        writeln!(self.file, "{line}")?;
        if log.step % 50 == 0 {
            log::info!(
                "step {} loss {:.5} simple {:.5} ({:.1} s)",
                log.step,
                log.loss.total,
                log.loss.simple,
                self.start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    }
}

fn run_training<M: DiffusionModel>(
    trainer: &mut Trainer,
    model: &M,
    samples: &[TrainingSample],
    steps: Option<u64>,
    log_path: &Path,
) -> Result<()> {
    let mut log = TrainLog::create(log_path)?;
    let mut io_err = None;
    let mut on_step = |s: &StepLog| {
        if io_err.is_none() {
            io_err = log.record(s).err();
        }
    };
    match steps {
        Some(n) => trainer.fit_steps(model, samples, n, &mut on_step)?,
        None => trainer.fit(model, samples, &mut on_step)?,
    }
    if let Some(e) = io_err {
        return Err(e).context("writing training log");
    }
    log.file.flush().context("writing training log")?;
    Ok(())
}

fn state_of(trainer: &Trainer) -> TrainingState {
    TrainingState {
        step: trainer.step_count(),
        rng: Some(RngState::capture(trainer.rng())),
        schedule: Some(trainer.config().schedule),
    }
}

pub fn train(mut doc: TrainDoc, out: &Path) -> Result<()> {
    if doc.data.is_none() {
        doc.data = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    }
    let data = file_in(required_path("data", &doc.data)?, "manifest.json");
    doc.train.seed = doc.seed;
    doc.model.init_seed = doc.seed;
    doc.model.cond_input_dim = match doc.condition {
        Conditioning::Pose => POSE_FEATURES,
        Conditioning::Beats => BEAT_FEATURES,
    };
    if doc.model.num_timesteps != doc.train.num_timesteps {
        return Err(ConfigError::field(
            "model.num_timesteps",
            format!("{} differs from train.num_timesteps {}", doc.model.num_timesteps, doc.train.num_timesteps),
        )
        .into());
    }
    if doc.window > doc.model.max_len {
        return Err(ConfigError::field("window", format!("{} exceeds model.max_len {}", doc.window, doc.model.max_len)).into());
    }
    doc.model.validate()?;
    doc.train.validate()?;
    let manifest = filter_kinds(load_manifest(&data)?, &doc.kinds);
    let samples = match doc.condition {
        Conditioning::Pose => load_training_windows(&manifest, Split::Train, doc.window, doc.window_stride, doc.conf_threshold)?,
        Conditioning::Beats => load_beat_windows(&manifest, Split::Train, &[], doc.window, doc.window_stride, None)?,
    };
    if samples.is_empty() {
        return Err(vimo_core::Error::TooFew { needed: 1, got: 0 }).context("no training windows");
    }
    log::info!("{} training windows of {} frames", samples.len(), doc.window);
    create_dir(out)?;
    write_json(&out.join(CONFIG_ECHO), &doc)?;
    let model = Denoiser::new(&doc.model, dtype_of(doc.precision))?;
    let mut trainer = Trainer::new(doc.train.clone(), Skeleton::canonical())?;
    run_training(&mut trainer, &model, &samples, doc.steps, &out.join(TRAIN_LOG))?;
    Checkpoint::save(out.join(CHECKPOINT_FILE), &model, &state_of(&trainer))?;
    Ok(())
}

fn load_checkpoint(field: &str, path: &Option<PathBuf>) -> Result<(Denoiser, TrainingState, DiffusionSchedule)> {
    let path = file_in(required_path(field, path)?, CHECKPOINT_FILE);
    let (model, state) = Checkpoint::load(&path)?;
    let sched = make_schedule(state.schedule.unwrap_or(ScheduleKind::Cosine), model.config().num_timesteps)?;
    Ok((model, state, sched))
}

fn features_tensor(feats: Vec<f64>, len: usize, width: usize) -> Result<Tensor> {
    Ok(Tensor::from_vec(feats, (1, len, width), &Device::Cpu)?)
}

/// Condition features for one sampling job, or `None` to sample unconditionally.
enum Job {
    Features { name: String, feats: Tensor, len: usize, fps: f64 },
    Unconditional { len: usize },
}

fn sample_jobs(doc: &SampleDoc, cond_dim: usize, max_len: usize) -> Result<Vec<Job>> {
    let length = |fps: f64| -> Result<usize> {
        let len = doc.length.ok_or_else(|| ConfigError::field("length", "required without pose conditions"))?;
        if len < 2 || len > max_len {
            return Err(ConfigError::field("length", format!("{len} outside 2..={max_len} at {fps} fps")).into());
        }
        Ok(len)
    };
    if cond_dim == POSE_FEATURES && !doc.poses.is_empty() {
        let mut jobs = Vec::new();
        for (i, p) in doc.poses.iter().enumerate() {
            let path = required_path(&format!("poses[{i}]"), &Some(p.clone()))?;
            let pose = prepare_condition(&load_pose_json(&path)?, doc.conf_threshold)?;
            let len = pose.len();
            jobs.push(Job::Features {
                name: format!("{i:03}"),
                feats: features_tensor(pose_features(&pose), len, POSE_FEATURES)?,
                len,
                fps: pose.fps,
            });
        }
        return Ok(jobs);
    }
    if !doc.poses.is_empty() {
        return Err(ConfigError::field("poses", "model is not pose-conditioned").into());
    }
    let fps = vimo_core::pose::SYNTH_FPS;
    match optional_path("music", &doc.music)? {
        Some(path) if cond_dim == BEAT_FEATURES => {
            let track = BeatTrack::load(&path)?;
            let len = length(fps)?;
            let feats = beat_features(&track.beats, len, fps, DEFAULT_BEAT_WIDTH)?;
            Ok(vec![Job::Features {
                name: "000".into(),
                feats: features_tensor(feats, len, BEAT_FEATURES)?,
                len,
                fps,
            }])
        }
        Some(_) => Err(ConfigError::field("music", "model is not beat-conditioned").into()),
        None => Ok(vec![Job::Unconditional { len: length(fps)? }]),
    }
}

fn run_sampling<M: DiffusionModel>(
    model: &M,
    jobs: &[Job],
    doc: &SampleDoc,
    sched: &DiffusionSchedule,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (j, job) in jobs.iter().enumerate() {
        let (cond, len, fps, name) = match job {
            Job::Features { name, feats, len, fps } => (Some(model.encode(feats)?), *len, *fps, name.clone()),
            Job::Unconditional { len } => (None, *len, vimo_core::pose::SYNTH_FPS, format!("{j:03}")),
        };
        for k in 0..doc.num_samples {
            let scfg = SamplerConfig {
                seed: derive_seed(doc.sampler.seed, (j * doc.num_samples + k) as u64),
                ..doc.sampler.clone()
            };
            let x = sample(model, cond.as_ref(), 1, len, sched, &scfg)?;
            let motion = tensor_to_motions(&x, fps)?.remove(0);
            if !motion.is_finite() {
                return Err(vimo_core::Error::NumericalFailure(format!("sample {name}_{k:02} is not finite")).into());
            }
            let path = dir.join(format!("sample_{name}_{k:02}.json"));
            motion.save(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn sample_cmd(mut doc: SampleDoc, out: &Path) -> Result<()> {
    doc.sampler.seed = doc.seed;
    if doc.num_samples == 0 {
        return Err(ConfigError::field("num_samples", "must be at least 1").into());
    }
    let (backbone, _, sched) = load_checkpoint("checkpoint", &doc.checkpoint)?;
    doc.sampler.validate(sched.num_steps)?;
    let cfg = backbone.config().clone();
    let jobs = sample_jobs(&doc, cfg.cond_input_dim, cfg.max_len)?;
    let dir = out.join("motions");
    create_dir(&dir)?;
    write_json(&out.join(CONFIG_ECHO), &doc)?;
    let written = match optional_path("adapter", &doc.adapter)? {
        Some(p) => {
            let (adapter, _) = ZeroConvAdapter::load(file_in(p, ADAPTER_FILE), &backbone)?;
            run_sampling(&adapter, &jobs, &doc, &sched, &dir)?
        }
        None => run_sampling(&backbone, &jobs, &doc, &sched, &dir)?,
    };
    log::info!("wrote {} motions to {}", written.len(), dir.display());
    Ok(())
}

pub fn complete_cmd(mut doc: CompleteDoc, out: &Path) -> Result<()> {
    doc.sampler.seed = doc.seed;
    let (model, _, sched) = load_checkpoint("checkpoint", &doc.checkpoint)?;
    doc.sampler.validate(sched.num_steps)?;
    let reference = Motion::load(required_path("reference", &doc.reference)?)?;
    let mask = MaskSpec::parse(&doc.mask, reference.len()).map_err(|e| ConfigError::field("mask", e.to_string()))?;
    let condition = match optional_path("pose", &doc.pose)? {
        Some(p) => Some(prepare_condition(&load_pose_json(p)?, doc.conf_threshold)?),
        None => None,
    };
    let req = EditRequest {
        reference,
        mask,
        condition,
        sampler: doc.sampler.clone(),
    };
    let motion = complete(&model, &req, &sched)?;
    ensure_parent(out)?;
    write_json(&echo_path_for_file(out), &doc)?;
    motion.save(out)?;
    Ok(())
}

pub fn stylize(mut doc: StylizeDoc, out: &Path) -> Result<()> {
    doc.train.seed = doc.seed;
    let (backbone, _, _) = load_checkpoint("backbone", &doc.backbone)?;
    let cfg = backbone.config().clone();
    if doc.train.num_timesteps != cfg.num_timesteps {
        return Err(ConfigError::field(
            "train.num_timesteps",
            format!("{} differs from the backbone's {}", doc.train.num_timesteps, cfg.num_timesteps),
        )
        .into());
    }
    doc.train.validate()?;
    let data = file_in(required_path("style_data", &doc.style_data)?, "manifest.json");
    let manifest = filter_kinds(load_manifest(&data)?, &doc.kinds);
    let mut samples = if cfg.cond_input_dim == BEAT_FEATURES {
        load_beat_windows(&manifest, Split::Train, &[], doc.window, doc.window_stride, doc.max_windows)?
    } else {
        load_training_windows(&manifest, Split::Train, doc.window, doc.window_stride, doc.conf_threshold)?
    };
    if let Some(n) = doc.max_windows {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(vimo_core::Error::TooFew { needed: 1, got: 0 }).context("no style windows");
    }
    log::info!("{} style windows", samples.len());
    create_dir(out)?;
    write_json(&out.join(CONFIG_ECHO), &doc)?;
    let adapter = ZeroConvAdapter::attach(&backbone)?;
    let mut trainer = Trainer::new(doc.train.clone(), Skeleton::canonical())?;
    run_training(&mut trainer, &adapter, &samples, doc.steps, &out.join(TRAIN_LOG))?;
    adapter.save(out.join(ADAPTER_FILE), &state_of(&trainer))?;
    Ok(())
}

/// Motion files of a directory in name order, or the motions of a manifest.
fn load_motion_set(field: &str, path: &Path) -> Result<(Vec<Motion>, Vec<PathBuf>)> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        let m = load_manifest(path)?;
        m.samples.iter().map(|s| m.path_of(&s.motion)).collect()
    };
    if files.len() < 2 {
        return Err(ConfigError::field(field, format!("{} holds {} motions, need at least 2", path.display(), files.len())).into());
    }
    let motions = files
        .iter()
        .map(|f| Motion::load(f).with_context(|| format!("reading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok((motions, files))
}

fn set_hash(files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for f in files {
        h.update(file_hash(f)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

pub fn eval(doc: EvalDoc, out: &Path) -> Result<()> {
    let gen_dir = required_path("generated", &doc.generated)?;
    let ref_path = required_path("reference", &doc.reference)?;
    if !(doc.beat_sigma > 0.0) {
        return Err(ConfigError::field("beat_sigma", "must be positive").into());
    }
    let music = match optional_path("music", &doc.music)? {
        Some(p) => Some(BeatTrack::load(p)?),
        None => None,
    };
    let skeleton = Skeleton::canonical();
    let (generated, gen_files) = load_motion_set("generated", &gen_dir)?;
    let (reference, ref_files) = load_motion_set("reference", &ref_path)?;
    let feats = |set: &[Motion]| set.iter().map(|m| motion_features(m, &skeleton)).collect::<vimo_core::Result<Vec<MotionFeatures>>>();
    let mut report = evaluate_features(&feats(&generated)?, &feats(&reference)?, music.as_ref(), doc.beat_sigma)?;
    let prov = &mut report.provenance;
    prov.insert("generated_set".into(), Value::String(set_hash(&gen_files)?));
    prov.insert("reference_set".into(), Value::String(set_hash(&ref_files)?));
    if let Some(p) = optional_path("checkpoint", &doc.checkpoint)? {
        prov.insert("checkpoint".into(), Value::String(file_hash(file_in(p, CHECKPOINT_FILE))?));
    }
    if let Some(p) = optional_path("manifest", &doc.manifest)? {
        prov.insert("manifest".into(), Value::String(file_hash(file_in(p, "manifest.json"))?));
    }
    if let Some(p) = &doc.music {
        prov.insert("music".into(), Value::String(file_hash(p)?));
    }
    ensure_parent(out)?;
    write_json(&echo_path_for_file(out), &doc)?;
    write_json(out, &report)
}

pub fn render(doc: RenderDoc, out: &Path) -> Result<()> {
    doc.render.validate()?;
    let motion = Motion::load(required_path("motion", &doc.motion)?)?;
    let gt = match (doc.render.overlay.ground_truth, &doc.ground_truth) {
        (true, p) => Some(Motion::load(required_path("ground_truth", p)?)?),
        (false, _) => None,
    };
    let cond = match (doc.render.overlay.condition, &doc.condition) {
        (true, p) => Some(load_pose_json(required_path("condition", p)?)?),
        (false, _) => None,
    };
    let frames = render_motion(&motion, &Skeleton::canonical(), &doc.render, gt.as_ref(), cond.as_ref())?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_ECHO), &doc)?;
    let files = write_frames(&frames, out)?;
    log::info!("wrote {} frames to {}", files.len(), out.display());
    Ok(())
}
