//! The `vimo` command line: argument parsing, config resolution, and the
//! mapping from failures to exit codes.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use vimo_core::Error as CoreError;

use crate::config::{load_doc, ConfigError};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "vimo", version, about = "Pose-conditioned motion diffusion from casual video keypoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config document for the subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the document's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (or file for `complete` and `eval`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-view dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        num_motions: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Train a denoiser checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest; defaults to $VIMO_DATA_ROOT.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Sample motions from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Condition pose file; repeatable.
        #[arg(long)]
        pose: Vec<PathBuf>,
        #[arg(long)]
        music: Option<PathBuf>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        num_samples: Option<usize>,
    },
    /// Regenerate the unconstrained part of a reference motion.
    Complete {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// inbetween:H,T | infill:A,B | root | all | none
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        pose: Option<PathBuf>,
    },
    /// Train a zero-initialized style adapter on a frozen backbone.
    Stylize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        backbone: Option<PathBuf>,
        #[arg(long)]
        style_data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Compare generated motions with reference motions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "gen")]
        generated: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        music: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Draw stick-figure frames of a motion.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        motion: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        condition: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
    },
}

struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    fn new(common: &Common) -> Self {
        let mut o = Self(Vec::new());
        o.add("seed", common.seed);
        o
    }

    fn add<T: serde::Serialize>(&mut self, key: &'static str, v: Option<T>) {
        if let Some(v) = v {
            self.0.push((key, serde_json::to_value(v).expect("flag values serialize")));
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    use commands::*;
    match cmd {
        Command::Synth { common, num_motions, length } => {
            let mut o = Overrides::new(&common);
            o.add("dataset.num_motions", num_motions);
            o.add("dataset.length", length);
            synth(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
        Command::Train { common, data, steps } => {
            let mut o = Overrides::new(&common);
            o.add("data", data);
            o.add("steps", steps);
            train(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
        Command::Sample { common, ckpt, adapter, pose, music, length, num_samples } => {
            let mut o = Overrides::new(&common);
            o.add("checkpoint", ckpt);
            o.add("adapter", adapter);
            o.add("poses", (!pose.is_empty()).then_some(pose));
            o.add("music", music);
            o.add("length", length);
            o.add("num_samples", num_samples);
            sample_cmd(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
        Command::Complete { common, ckpt, reference, mask, pose } => {
            let mut o = Overrides::new(&common);
            o.add("checkpoint", ckpt);
            o.add("reference", reference);
            o.add("mask", mask);
            o.add("pose", pose);
            complete_cmd(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
        Command::Stylize { common, backbone, style_data, steps } => {
            let mut o = Overrides::new(&common);
            o.add("backbone", backbone);
            o.add("style_data", style_data);
            o.add("steps", steps);
            stylize(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
        Command::Eval { common, generated, reference, music, ckpt, manifest } => {
            let mut o = Overrides::new(&common);
            o.add("generated", generated);
            o.add("reference", reference);
            o.add("music", music);
            o.add("checkpoint", ckpt);
            o.add("manifest", manifest);
            eval(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
        Command::Render { common, motion, gt, condition, stride } => {
            let mut o = Overrides::new(&common);
            o.add("motion", motion);
            o.add("ground_truth", gt);
            o.add("condition", condition);
            o.add("render.stride", stride);
            render(load_doc(common.config.as_deref(), o.0)?, &common.out)
        }
    }
}

/// Exit code and error kind for a failure.
pub fn classify(err: &anyhow::Error) -> (u8, &'static str, Option<String>) {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<ConfigError>() {
            return (EXIT_CONFIG, "config", c.field.clone());
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::BadKind(_) | CoreError::BadRange(_) | CoreError::CheckpointMismatch(_) => {
                    (EXIT_CONFIG, "config", None)
                }
                CoreError::NumericalFailure(_)
                | CoreError::NonFiniteLoss { .. }
                | CoreError::DegenerateRotation(_)
                | CoreError::NotARotation(_)
                | CoreError::Candle(_) => (EXIT_NUMERICAL, "numerical", None),
                _ => (EXIT_DATA, "data", None),
            };
        }
    }
    (EXIT_DATA, "data", None)
}

/// Parses `args`, runs the subcommand, and reports failures as one JSON
/// object on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({ "kind": "config", "exit_code": EXIT_CONFIG, "message": msg.trim() }));
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind, field) = classify(&err);
            let mut obj = json!({ "kind": kind, "exit_code": code, "message": format!("{err:#}") });
            if let Some(f) = field {
                obj["field"] = Value::String(f);
            }
            eprintln!("{obj}");
            ExitCode::from(code)
        }
    }
}
