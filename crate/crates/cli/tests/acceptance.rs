//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr, so `cargo test --test acceptance -- --nocapture` is not needed to
//! see the summary.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use tempfile::TempDir;
use vimo_core::adapter::{beat_features, synthetic_beat_track, ZeroConvAdapter, BEAT_FEATURES, DEFAULT_BEAT_WIDTH};
use vimo_core::diffusion::*;
use vimo_core::edit::{build_inbetween_mask, complete, EditRequest, MaskSpec};
use vimo_core::metrics::*;
use vimo_core::net::*;
use vimo_core::pose::*;
use vimo_core::rng::derive_seed;
use vimo_core::skeleton::*;

use common::*;

// Tolerances.
const ROT_ROUNDTRIP_TOL: f64 = 1e-6;
const BONE_LENGTH_TOL: f64 = 1e-6;
const EQUIVARIANCE_TOL: f64 = 1e-5;
const NOISE_MEAN_TOL: f64 = 0.01;
const NOISE_VAR_TOL: f64 = 0.02;
const NOISE_SE_BOUND: f64 = 5.0;
const GRAD_REL_TOL: f64 = 1e-3;
const OVERFIT_LOSS_TOL: f64 = 0.01;
const OVERFIT_FK_TOL: f64 = 0.15;
const COMPLETION_TOL: f64 = 1e-6;
const ADAPTER_IDENTITY_TOL: f64 = 1e-7;
const STYLE_SWEEP_RATIO: f64 = 3.0;
const FID_SELF_TOL: f64 = 1e-8;
const FID_ANALYTIC_TOL: f64 = 1e-6;
const BEAT_TOL: f64 = 1e-9;
const DIVERSITY_TOL: f64 = 1e-12;
const GENERALIZATION_RATIO: f64 = 0.5;
const GENERALIZATION_PASSES: usize = 8;

// Experiment sizes.
const OVERFIT_WINDOW: usize = 60;
const OVERFIT_STEPS: u64 = 2000;
const OVERFIT_TAIL: usize = 100;
const STYLE_WINDOW: usize = 60;
const BACKBONE_STEPS: u64 = 600;
const ADAPTER_STEPS: u64 = 500;
const STYLE_SAMPLES: usize = 16;
const GEN_WINDOW: usize = 60;
const GEN_STEPS: u64 = 2000;
const GEN_SEEDS: u64 = 10;

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q))
        .to_rotation_matrix()
        .into_inner()
}

fn random_motion(rng: &mut impl Rng, frames: usize) -> Motion {
    let mut m = Motion::rest(frames, Vector3::zeros(), SYNTH_FPS);
    for f in 0..frames {
        for j in 0..NUM_JOINTS {
            m.set_rotation_matrix(f, j, &random_rotation(rng)).unwrap();
        }
        m.set_root(f, Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)));
    }
    m
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn gaussian_tensor(rng: &mut impl Rng, shape: (usize, usize, usize)) -> Tensor {
    let n = shape.0 * shape.1 * shape.2;
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn mean_joint_error(a: &Motion, b: &Motion, sk: &Skeleton) -> f64 {
    let pa = forward_kinematics(a, sk).unwrap();
    let pb = forward_kinematics(b, sk).unwrap();
    let mut sum = 0.0;
    for f in 0..a.len() {
        for j in 0..NUM_JOINTS {
            sum += (pa.joint(f, j) - pb.joint(f, j)).norm();
        }
    }
    sum / (a.len() * NUM_JOINTS) as f64
}

#[test]
fn c01_geometry() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut roundtrip: f64 = 0.0;
    for _ in 0..10_000 {
        let m = random_rotation(&mut rng);
        let back = rot6d_to_matrix(&matrix_to_rot6d(&m).unwrap()).unwrap();
        roundtrip = roundtrip.max((back - m).amax());
    }

    let sk = Skeleton::canonical();
    let motion = random_motion(&mut rng, 200);
    let pos = forward_kinematics(&motion, &sk).unwrap();
    let mut bone: f64 = 0.0;
    for f in 0..motion.len() {
        for j in 0..NUM_JOINTS {
            if let Some(p) = sk.parent(j) {
                let len = sk.offset(j).norm();
                let got = (pos.joint(f, j) - pos.joint(f, p)).norm();
                bone = bone.max((got - len).abs() / len);
            }
        }
    }

    let mut equi: f64 = 0.0;
    for _ in 0..20 {
        let g = random_rotation(&mut rng);
        let mut turned = motion.clone();
        for f in 0..motion.len() {
            let root = rot6d_to_matrix(&motion.rotation(f, 0)).unwrap();
            turned.set_rotation_matrix(f, 0, &(g * root)).unwrap();
            turned.set_root(f, g * motion.root(f));
        }
        let tp = forward_kinematics(&turned, &sk).unwrap();
        for f in 0..motion.len() {
            for j in 0..NUM_JOINTS {
                equi = equi.max((tp.joint(f, j) - g * pos.joint(f, j)).amax());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "geometry",
        roundtrip < ROT_ROUNDTRIP_TOL && bone < BONE_LENGTH_TOL && equi < EQUIVARIANCE_TOL && secs < 30.0,
        format!("roundtrip {roundtrip:.2e}, bone {bone:.2e}, equivariance {equi:.2e}, {secs:.1}s"),
    );
}

struct MomentCheck {
    pooled_mean: f64,
    pooled_var: f64,
    worst_mean_se: f64,
    worst_var_se: f64,
}

/// Compares sample moments with the analytic marginal at step `t`. The pooled
/// figures average over coordinates; the worst-case figures are in standard
/// errors of a single coordinate.
fn moment_check(samples: &[Vec<f64>], m0: &[f64], abar: f64) -> MomentCheck {
    let n = samples.len() as f64;
    let d = m0.len();
    let var = 1.0 - abar;
    let sd = var.sqrt();
    let mut mean_err = 0.0;
    let mut var_hat_sum = 0.0;
    let mut worst_mean_se: f64 = 0.0;
    let mut worst_var_se: f64 = 0.0;
    for c in 0..d {
        let mu = abar.sqrt() * m0[c];
        let m = samples.iter().map(|x| x[c]).sum::<f64>() / n;
        let v = samples.iter().map(|x| (x[c] - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean_err += (m - mu) / mu.abs().max(sd);
        var_hat_sum += v;
        worst_mean_se = worst_mean_se.max((m - mu).abs() / (sd / n.sqrt()));
        worst_var_se = worst_var_se.max((v / var - 1.0).abs() / (2.0 / (n - 1.0)).sqrt());
    }
    MomentCheck {
        pooled_mean: (mean_err / d as f64).abs(),
        pooled_var: (var_hat_sum / (d as f64 * var) - 1.0).abs(),
        worst_mean_se,
        worst_var_se,
    }
}

#[test]
fn c02_noising() {
    let start = Instant::now();
    let sched = make_schedule(ScheduleKind::Cosine, 1000).unwrap();
    let draws = 10_000;
    let dims = 64;
    let m0: Vec<f64> = synth_motion(MotionKind::Walk, 3, 1).motion.frames[0][..dims].to_vec();
    let mut pass = true;
    let mut details = Vec::new();
    for (i, t) in [1, sched.num_steps / 2, sched.num_steps].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(20, i as u64));
        let mut iterated = Vec::with_capacity(draws);
        let mut closed = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut x = m0.clone();
            for k in 1..=t {
                let (a, b) = (sched.alphas[k].sqrt(), (1.0 - sched.alphas[k]).sqrt());
                for v in x.iter_mut() {
                    *v = a * *v + b * rng.sample::<f64, _>(StandardNormal);
                }
            }
            iterated.push(x);
            let noise: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
            closed.push(sched.q_sample(&m0, t, &noise).unwrap());
        }
        for (name, set) in [("iterated", &iterated), ("closed", &closed)] {
            let c = moment_check(set, &m0, sched.alpha_bars[t]);
            pass &= c.pooled_mean < NOISE_MEAN_TOL
                && c.pooled_var < NOISE_VAR_TOL
                && c.worst_mean_se < NOISE_SE_BOUND
                && c.worst_var_se < NOISE_SE_BOUND;
            details.push(format!(
                "t={t} {name}: mean {:.4} var {:.4} (worst {:.1}/{:.1} SE)",
                c.pooled_mean, c.pooled_var, c.worst_mean_se, c.worst_var_se
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(2, "noising", pass && secs < 60.0, format!("{}; {secs:.1}s", details.join("; ")));
}

fn perturb(params: &ParamStore, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, var) in params.iter() {
        let v: Vec<f64> = flat(var.as_tensor())
            .into_iter()
            .map(|x| x + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let v = Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap().to_dtype(var.dtype()).unwrap();
        var.set(&v).unwrap();
    }
}

#[test]
fn c03_gradient_check() {
    let start = Instant::now();
    let cfg = ModelConfig {
        hidden_dim: 16,
        num_blocks: 2,
        num_heads: 2,
        cond_dim: 8,
        mlp_ratio: 2,
        dropout_rate: 0.0,
        max_len: 8,
        init_seed: 3,
        ..ModelConfig::default()
    };
    let model = Denoiser::new(&cfg, DType::F64).unwrap();
    perturb(model.params(), 0.1, 4);
    let sk = Skeleton::canonical();
    let fk = TensorFk::new(&sk, DType::F64).unwrap();
    let s = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let motions: Vec<Motion> = [MotionKind::Walk, MotionKind::Jump]
        .iter()
        .enumerate()
        .map(|(i, &k)| synth_motion(k, i as u64, s).motion)
        .collect();
    let m0 = motions_to_tensor(&motions.iter().collect::<Vec<_>>()).unwrap();
    let feats = gaussian_tensor(&mut rng, (2, s, POSE_FEATURES));
    let sched = make_schedule(ScheduleKind::Cosine, 1000).unwrap();
    let t = [40, 300];
    let x_t = sched.q_sample_tensor(&m0, &t, &gaussian_tensor(&mut rng, (2, s, MOTION_DIM))).unwrap();
    let weights = LossWeights {
        joints: 1.0,
        velocity: 1.0,
        foot: 1.0,
    };
    let objective = || {
        let cond = model.encode_features(&feats).unwrap();
        let pred = model.denoise(&x_t, &t, Some(&cond)).unwrap();
        loss_terms(&fk, &sk, &m0, &pred).unwrap().total(&weights, &[true, true]).unwrap()
    };
    let (loss, parts) = objective();
    let grads = loss.backward().unwrap();

    let entries: Vec<(String, usize)> = model
        .params()
        .iter()
        .flat_map(|(name, v)| (0..v.elem_count()).map(move |i| (name.clone(), i)))
        .collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for _ in 0..100 {
        let (name, i) = &entries[rng.random_range(0..entries.len())];
        let var = model.params().get(name).unwrap();
        let analytic = grads.get(var.as_tensor()).map(|g| flat(g)[*i]).unwrap_or(0.0);
        let base = flat(var.as_tensor());
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[*i] += delta;
            var.set(&Tensor::from_vec(v, var.shape(), &Device::Cpu).unwrap()).unwrap();
            objective().1.total
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        var.set(&Tensor::from_vec(base, var.shape(), &Device::Cpu).unwrap()).unwrap();
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > worst {
            worst = rel;
            worst_at = format!("{name}[{i}]");
        }
    }
    let all_terms = parts.joints > 0.0 && parts.velocity > 0.0 && parts.foot > 0.0;
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "gradient check",
        worst < GRAD_REL_TOL && all_terms && secs < 300.0,
        format!(
            "worst relative error {worst:.2e} at {worst_at} over 100 probes; terms simple {:.3} joints {:.3} vel {:.3} foot {:.3}; {secs:.1}s",
            parts.simple, parts.joints, parts.velocity, parts.foot
        ),
    );
}

struct Overfit {
    samples: Vec<TrainingSample>,
    model: Denoiser,
    sched: DiffusionSchedule,
    tail_simple: f64,
    train_secs: f64,
}

/// The shared overfit run: 8 single-view windows, L_simple only, no
/// condition dropout.
fn overfit() -> &'static Overfit {
    static RUN: OnceLock<Overfit> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let dir = TempDir::new().unwrap();
        let data = DatasetConfig {
            num_motions: 8,
            views: 1,
            length: OVERFIT_WINDOW,
            seed: 40,
            ..DatasetConfig::default()
        };
        let manifest = build_dataset(&data, dir.path()).unwrap();
        let samples =
            load_training_windows(&manifest, Split::Train, OVERFIT_WINDOW, OVERFIT_WINDOW, DEFAULT_CONF_THRESHOLD)
                .unwrap();
        assert_eq!(samples.len(), 8);
        let model = Denoiser::new(&ModelConfig { init_seed: 41, ..ModelConfig::tiny() }, DType::F32).unwrap();
        let cfg = TrainConfig {
            seed: 42,
            loss_weights: LossWeights::zero(),
            cond_dropout_prob: 0.0,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, Skeleton::canonical()).unwrap();
        let mut tail = Vec::new();
        trainer
            .fit_steps(&model, &samples, OVERFIT_STEPS, |log| {
                if log.step > OVERFIT_STEPS - OVERFIT_TAIL as u64 {
                    tail.push(log.loss.simple);
                }
            })
            .unwrap();
        Overfit {
            tail_simple: tail.iter().sum::<f64>() / tail.len() as f64,
            sched: trainer.schedule().clone(),
            samples,
            model,
            train_secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c04_overfit() {
    let run = overfit();
    let start = Instant::now();
    let refs: Vec<&TrainingSample> = run.samples.iter().collect();
    let cond = run.model.encode_features(&features_tensor(&refs).unwrap()).unwrap();
    let scfg = SamplerConfig {
        seed: 43,
        guidance_weight: 1.0,
        ..SamplerConfig::default()
    };
    let out = sample_motions(&run.model, &cond, &run.sched, &scfg, SYNTH_FPS).unwrap();
    let sk = Skeleton::canonical();
    let fk_err = out
        .iter()
        .zip(&run.samples)
        .map(|(g, r)| mean_joint_error(g, &r.motion, &sk))
        .sum::<f64>()
        / out.len() as f64;
    let secs = run.train_secs + start.elapsed().as_secs_f64();
    report(
        4,
        "overfit",
        run.tail_simple < OVERFIT_LOSS_TOL && fk_err < OVERFIT_FK_TOL && secs < 900.0,
        format!(
            "L_simple {:.4} (mean of last {OVERFIT_TAIL} of {OVERFIT_STEPS} steps), DDIM-{} w={} FK error {fk_err:.3} m, {} params, {secs:.0}s",
            run.tail_simple,
            scfg.ddim_steps,
            scfg.guidance_weight,
            run.model.params().num_parameters()
        ),
    );
}

#[test]
fn c05_guidance_identities() {
    let cfg = ModelConfig {
        hidden_dim: 32,
        num_blocks: 2,
        cond_dim: 16,
        max_len: 20,
        init_seed: 50,
        ..ModelConfig::default()
    };
    let model = Denoiser::new(&cfg, DType::F32).unwrap();
    perturb(model.params(), 0.05, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let (b, s) = (3, 20);
    let x = gaussian_tensor(&mut rng, (b, s, MOTION_DIM));
    let t = [5, 400, 999];
    let cond = model
        .encode_features(&gaussian_tensor(&mut rng, (b, s, POSE_FEATURES)))
        .unwrap();
    let bits = |t: &Tensor| flat(t).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let x32 = x.to_dtype(DType::F32).unwrap();
    let uncond = model.denoise(&x32, &t, None).unwrap();
    let with = model.denoise(&x32, &t, Some(&cond)).unwrap();
    let w0 = guided_denoise(&model, &x, &t, Some(&cond), 0.0).unwrap();
    let w1 = guided_denoise(&model, &x, &t, Some(&cond), 1.0).unwrap();
    let zero_ok = bits(&w0) == bits(&uncond);
    let one_ok = bits(&w1) == bits(&with);

    let null = model.null_condition(b, s).unwrap();
    let dropped = cond.blend(&null, &[false, true, false]).unwrap();
    let out = model.denoise(&x32, &t, Some(&dropped)).unwrap();
    let mut null_ok = true;
    for (row, keep) in [false, true, false].into_iter().enumerate() {
        let want = if keep { &with } else { &uncond };
        null_ok &= bits(&out.narrow(0, row, 1).unwrap()) == bits(&want.narrow(0, row, 1).unwrap());
    }
    let mixed = guided_denoise(&model, &x, &t, Some(&cond), 0.75).unwrap();
    let mix_err = flat(&uncond)
        .iter()
        .zip(flat(&with))
        .zip(flat(&mixed))
        .map(|((u, c), m)| (0.25 * u + 0.75 * c - m).abs())
        .fold(0.0, f64::max);
    report(
        5,
        "guidance identities",
        zero_ok && one_ok && null_ok && mix_err < 1e-12,
        format!("w=0 bitwise {zero_ok}, w=1 bitwise {one_ok}, dropout null path bitwise {null_ok}, w=0.75 mix error {mix_err:.1e}"),
    );
}

#[test]
fn c06_completion() {
    let run = overfit();
    let reference = run.samples[0].motion.clone();
    let s = reference.len();
    let scfg = SamplerConfig {
        seed: 60,
        ..SamplerConfig::default()
    };
    let request = |mask: MaskSpec| EditRequest {
        reference: reference.clone(),
        mask,
        condition: None,
        sampler: scfg.clone(),
    };

    let inbetween = build_inbetween_mask(s, 10, 10).unwrap();
    let filled = complete(&run.model, &request(inbetween.clone()), &run.sched).unwrap();
    let mut held: f64 = 0.0;
    for f in 0..s {
        for c in 0..MOTION_DIM {
            if inbetween.is_set(f, c) {
                held = held.max((filled.frames[f][c] - reference.frames[f][c]).abs());
            }
        }
    }

    let all = complete(&run.model, &request(MaskSpec::parse("all", s).unwrap()), &run.sched).unwrap();
    let all_exact = all.to_flat() == reference.to_flat();

    let none = complete(&run.model, &request(MaskSpec::parse("none", s).unwrap()), &run.sched).unwrap();
    let plain = sample(&run.model, None, 1, s, &run.sched, &scfg).unwrap();
    let none_exact = flat(&plain).iter().map(|v| v.to_bits()).eq(none.to_flat().iter().map(|v| v.to_bits()));

    report(
        6,
        "completion",
        held < COMPLETION_TOL && all_exact && none_exact,
        format!("in-between constrained error {held:.1e}, all-ones exact {all_exact}, all-zeros matches plain sampling {none_exact}"),
    );
}

/// Mean absolute net root-yaw change over each motion, in radians.
fn yaw_sweep(motions: &[Motion]) -> f64 {
    let mut total = 0.0;
    for m in motions {
        let yaws: Vec<f64> = (0..m.len())
            .map(|f| rot6d_to_matrix(&m.rotation(f, 0)).map(|r| yaw_of(&r)).unwrap_or(0.0))
            .collect();
        let net: f64 = yaws
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                d - (2.0 * PI) * ((d + PI) / (2.0 * PI)).floor()
            })
            .sum();
        total += net.abs();
    }
    total / motions.len() as f64
}

#[test]
fn c07_adapter() {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let data = DatasetConfig {
        kinds: vec![MotionKind::Walk, MotionKind::Wave, MotionKind::Spin],
        num_motions: 12,
        views: 1,
        length: STYLE_WINDOW,
        seed: 70,
        ..DatasetConfig::default()
    };
    let manifest = build_dataset(&data, dir.path()).unwrap();
    let base = load_beat_windows(
        &manifest,
        Split::Train,
        &[MotionKind::Walk, MotionKind::Wave],
        STYLE_WINDOW,
        STYLE_WINDOW,
        None,
    )
    .unwrap();
    let style = load_beat_windows(&manifest, Split::Train, &[MotionKind::Spin], STYLE_WINDOW, STYLE_WINDOW, Some(4)).unwrap();
    assert_eq!(style.len(), 4);

    let mcfg = ModelConfig {
        cond_input_dim: BEAT_FEATURES,
        max_len: STYLE_WINDOW,
        init_seed: 71,
        ..ModelConfig::tiny()
    };
    let backbone = Denoiser::new(&mcfg, DType::F32).unwrap();
    let tcfg = |seed| TrainConfig {
        seed,
        loss_weights: LossWeights::zero(),
        ..TrainConfig::default()
    };
    Trainer::new(tcfg(72), Skeleton::canonical())
        .unwrap()
        .fit_steps(&backbone, &base, BACKBONE_STEPS, |_| {})
        .unwrap();
    let before = backbone.params().hash().unwrap();

    let adapter = ZeroConvAdapter::attach(&backbone).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut identity: f64 = 0.0;
    for _ in 0..100 {
        let x = gaussian_tensor(&mut rng, (1, STYLE_WINDOW, MOTION_DIM)).to_dtype(DType::F32).unwrap();
        let t = [rng.random_range(1..=mcfg.num_timesteps)];
        let cond = backbone
            .encode_features(&gaussian_tensor(&mut rng, (1, STYLE_WINDOW, BEAT_FEATURES)))
            .unwrap();
        let a = flat(&DiffusionModel::forward(&adapter, &x, &t, Some(&cond), None).unwrap());
        let b = flat(&backbone.denoise(&x, &t, Some(&cond)).unwrap());
        identity = identity.max(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }

    Trainer::new(tcfg(74), Skeleton::canonical())
        .unwrap()
        .fit_steps(&adapter, &style, ADAPTER_STEPS, |_| {})
        .unwrap();
    let frozen = backbone.params().hash().unwrap() == before && adapter.backbone().params().hash().unwrap() == before;

    let beats: Vec<f64> = (0..STYLE_SAMPLES)
        .flat_map(|k| {
            let track = synthetic_beat_track(derive_seed(75, k as u64), STYLE_WINDOW as f64 / SYNTH_FPS);
            beat_features(&track.beats, STYLE_WINDOW, SYNTH_FPS, DEFAULT_BEAT_WIDTH).unwrap()
        })
        .collect();
    let feats = Tensor::from_vec(beats, (STYLE_SAMPLES, STYLE_WINDOW, BEAT_FEATURES), &Device::Cpu).unwrap();
    let sched = make_schedule(ScheduleKind::Cosine, mcfg.num_timesteps).unwrap();
    let scfg = SamplerConfig {
        seed: 76,
        ..SamplerConfig::default()
    };
    let cond = backbone.encode_features(&feats).unwrap();
    let plain = yaw_sweep(&sample_motions(&backbone, &cond, &sched, &scfg, SYNTH_FPS).unwrap());
    let styled = yaw_sweep(&sample_motions(&adapter, &cond, &sched, &scfg, SYNTH_FPS).unwrap());
    let target = yaw_sweep(&style.iter().map(|s| s.motion.clone()).collect::<Vec<_>>());
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        "zero-conv adapter",
        identity < ADAPTER_IDENTITY_TOL && frozen && styled >= STYLE_SWEEP_RATIO * plain,
        format!(
            "identity max-abs {identity:.1e}, backbone unchanged {frozen}, root-yaw sweep adapter {styled:.2} rad vs backbone {plain:.2} rad (spin data {target:.2} rad), {secs:.0}s"
        ),
    );
}

#[test]
fn c08_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let x: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let gx = fit_gaussian(&x).unwrap();
    let self_fid = fid(&gx, &gx).unwrap().abs();

    let one_d = |mean: f64, var: f64| GaussianStats {
        mean: DVector::from_vec(vec![mean]),
        cov: DMatrix::from_vec(1, 1, vec![var]),
        count: 2,
    };
    let shift_case = fid(&one_d(0.0, 1.0), &one_d(1.0, 1.0)).unwrap();
    let scale_case = fid(&one_d(0.0, 1.0), &one_d(0.0, 4.0)).unwrap();
    let analytic = (shift_case - 1.0).abs().max((scale_case - 1.0).abs());

    let delta = [0.3, -1.2, 0.5, 2.0, 0.0, -0.7];
    let shifted: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&delta).map(|(a, d)| a + d).collect()).collect();
    let want: f64 = delta.iter().map(|d| d * d).sum();
    let shift = (fid(&gx, &fit_gaussian(&shifted).unwrap()).unwrap() - want).abs();

    let sigma = DEFAULT_BEAT_SIGMA;
    let music = BeatTrack::new(vec![0.5, 1.1, 1.9]).unwrap();
    let same = (beat_align(&music, &music, sigma).unwrap() - 1.0).abs();
    let offset = BeatTrack::new(music.beats.iter().map(|b| b + sigma).collect()).unwrap();
    let off = (beat_align(&music, &offset, sigma).unwrap() - (-0.5f64).exp()).abs();

    let sk = Skeleton::canonical();
    let still = pfc(&Motion::rest(60, Vector3::new(0.0, sk.rest_root_height(), 0.0), SYNTH_FPS), &sk).unwrap();

    let div = (diversity(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap() - 4.0 / 3.0).abs();

    report(
        8,
        "metrics",
        self_fid < FID_SELF_TOL
            && analytic < FID_ANALYTIC_TOL
            && shift < FID_ANALYTIC_TOL
            && same < BEAT_TOL
            && off < BEAT_TOL
            && still == 0.0
            && div < DIVERSITY_TOL,
        format!(
            "fid(X,X) {self_fid:.1e}, 1-D cases {analytic:.1e}, mean shift {shift:.1e}, BA identical {same:.1e}, BA offset {off:.1e}, static PFC {still}, diversity {div:.1e}"
        ),
    );
}

#[test]
fn c09_generalization() {
    let start = Instant::now();
    let dir = TempDir::new().unwrap();
    let data = DatasetConfig {
        kinds: vec![MotionKind::Walk, MotionKind::Wave],
        num_motions: 8,
        views: 4,
        length: GEN_WINDOW,
        seed: 90,
        ..DatasetConfig::default()
    };
    let manifest = build_dataset(&data, dir.path()).unwrap();
    let samples =
        load_training_windows(&manifest, Split::Train, GEN_WINDOW, GEN_WINDOW, DEFAULT_CONF_THRESHOLD).unwrap();
    let model = Denoiser::new(
        &ModelConfig {
            max_len: GEN_WINDOW,
            init_seed: 91,
            ..ModelConfig::tiny()
        },
        DType::F32,
    )
    .unwrap();
    let cfg = TrainConfig {
        seed: 92,
        loss_weights: LossWeights::zero(),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, Skeleton::canonical()).unwrap();
    trainer.fit_steps(&model, &samples, GEN_STEPS, |_| {}).unwrap();

    let sk = Skeleton::canonical();
    let others = [MotionKind::Wave, MotionKind::Spin, MotionKind::Jump];
    let mut passes = 0;
    let mut ratios = Vec::new();
    for k in 0..GEN_SEEDS {
        let seed = derive_seed(1_000, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = synth_motion(MotionKind::Walk, derive_seed(seed, 0), GEN_WINDOW).motion;
        let roots: Vec<Vector3<f64>> = (0..truth.len()).map(|f| truth.root(f)).collect();
        let camera = CameraTrack::casual(&roots, &mut rng, true, 0.0);
        let view = render_views(&truth, &sk, &[camera], &OcclusionModel::with_rate(0.2), derive_seed(seed, 1))
            .unwrap()
            .remove(0);
        let condition = prepare_condition(&view, DEFAULT_CONF_THRESHOLD).unwrap();
        let cond = model.encode_condition(&[&condition]).unwrap();
        let scfg = SamplerConfig {
            seed: derive_seed(seed, 2),
            ..SamplerConfig::default()
        };
        let generated = sample_motions(&model, &cond, trainer.schedule(), &scfg, SYNTH_FPS).unwrap().remove(0);
        let other = others[rng.random_range(0..others.len())];
        let reference = synth_motion(other, derive_seed(seed, 3), GEN_WINDOW).motion;

        let kf = |m: &Motion| kinetic_features(m, &sk).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let g = kf(&generated);
        let ratio = dist(&g, &kf(&truth)) / dist(&g, &kf(&reference));
        if ratio < GENERALIZATION_RATIO {
            passes += 1;
        }
        ratios.push(format!("{ratio:.2}({other})"));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        9,
        "generalization",
        passes >= GENERALIZATION_PASSES && secs < 1200.0,
        format!("{passes}/{GEN_SEEDS} seeds below {GENERALIZATION_RATIO}: [{}], {secs:.0}s", ratios.join(", ")),
    );
}

#[test]
fn c10_cli_reproducibility() {
    let start = Instant::now();
    let root = TempDir::new().unwrap();
    let p = |n: &str| root.path().join(n);
    let synth_cfg = write_config(
        root.path(),
        "synth.json",
        json!({ "dataset": { "views": 2, "kinds": ["walk", "spin"] } }),
    );
    let train_cfg = write_config(
        root.path(),
        "train.json",
        json!({ "window": 30, "window_stride": 30, "model": { "max_len": 30, "hidden_dim": 32, "cond_dim": 16 }, "train": { "batch_size": 4 } }),
    );
    let beats_cfg = write_config(
        root.path(),
        "beats.json",
        json!({ "condition": "beats", "window": 30, "window_stride": 30, "model": { "max_len": 30, "hidden_dim": 32, "cond_dim": 16 }, "train": { "batch_size": 4 } }),
    );
    let style_cfg = write_config(root.path(), "style.json", json!({ "kinds": ["spin"], "window": 30, "window_stride": 30 }));
    let sampler_cfg = write_config(root.path(), "sampler.json", json!({ "sampler": { "ddim_steps": 8 } }));
    let music = p("music.json");
    std::fs::write(&music, json!({ "beats": [0.2, 0.6, 0.9] }).to_string()).unwrap();

    let mut results = Vec::new();
    let mut run = |name: &str, args: Vec<String>, out_is_file: bool| {
        let mut hashes = Vec::new();
        for rep in 0..2 {
            let out = p(&format!("{name}_{rep}"));
            let target = if out_is_file { out.join("out.json") } else { out.clone() };
            if out_is_file {
                std::fs::create_dir_all(&out).unwrap();
            }
            let mut full: Vec<String> = args.clone();
            full.extend(["--out".to_string(), target.to_string_lossy().into_owned()]);
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            vimo_ok(&refs);
            hashes.push(tree_hashes(&out));
        }
        let same = !hashes[0].is_empty() && hashes[0] == hashes[1];
        results.push((name.to_string(), same));
        same
    };
    let sv = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let data = p("synth_0");
    let ds = s(&data).to_string();

    run("synth", sv(&["synth", "--config", s(&synth_cfg), "--seed", "9", "--num-motions", "2", "--length", "30"]), false);
    run("train", sv(&["train", "--config", s(&train_cfg), "--data", &ds, "--steps", "15", "--seed", "9"]), false);
    run("train_beats", sv(&["train", "--config", s(&beats_cfg), "--data", &ds, "--steps", "10", "--seed", "9"]), false);
    let ckpt = p("train_0").join("checkpoint.bin");
    let beats_ckpt = p("train_beats_0").join("checkpoint.bin");
    let pose = data.join("poses").join("0000_walk_v0.json");
    let reference = data.join("motions").join("0000_walk.json");
    run(
        "sample",
        sv(&["sample", "--config", s(&sampler_cfg), "--ckpt", s(&ckpt), "--pose", s(&pose), "--num-samples", "2", "--seed", "9"]),
        false,
    );
    run(
        "complete",
        sv(&["complete", "--config", s(&sampler_cfg), "--ckpt", s(&ckpt), "--ref", s(&reference), "--mask", "inbetween:5,5", "--seed", "9"]),
        true,
    );
    run(
        "stylize",
        sv(&["stylize", "--config", s(&style_cfg), "--backbone", s(&beats_ckpt), "--style-data", &ds, "--steps", "10", "--seed", "9"]),
        false,
    );
    let adapter = p("stylize_0").join("adapter.bin");
    run(
        "sample_adapter",
        sv(&["sample", "--config", s(&sampler_cfg), "--ckpt", s(&beats_ckpt), "--adapter", s(&adapter), "--music", s(&music), "--length", "30", "--seed", "9"]),
        false,
    );
    run(
        "eval",
        sv(&["eval", "--gen", s(&p("sample_0").join("motions")), "--ref", s(&data.join("manifest.json")), "--music", s(&music)]),
        true,
    );
    run("render", sv(&["render", "--motion", s(&reference), "--stride", "10"]), false);

    let failed: Vec<&str> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    let secs = start.elapsed().as_secs_f64();
    report(
        10,
        "CLI reproducibility",
        failed.is_empty(),
        format!("{} runs repeated, mismatches {:?}, {secs:.0}s", results.len(), failed),
    );
}
