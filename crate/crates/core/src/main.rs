//! `mgfr`: train, evaluate and run the face reenactment model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgfr::face::{disentangled_driving, interpolate_params, Coefficients, DriveMode};
use mgfr::harness::bench::{bench, format_table};
use mgfr::harness::checks::run_all;
use mgfr::harness::eval::{evaluate, reenact_frames};
use mgfr::harness::pipeline::{dataset_for, generate_dataset, run_training};
use mgfr::harness::{load_checkpoint, Generator, Model, TrainConfig};
use mgfr::synth::{Dataset, Image};
use mgfr::tensor::no_grad;
use mgfr::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mgfr",
    version,
    about = "Mesh-guided one-shot face reenactment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the regressor and train the generator and critic.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        /// Look up ground-truth coefficients instead of pretraining a regressor.
        #[arg(long)]
        use_oracle_regressor: bool,
    },
    /// Reenact one driving frame from one source frame.
    Reenact {
        #[command(flatten)]
        frames: FrameArgs,
    },
    /// Blend pose and expression from source to driving in `--alpha-steps` cells.
    Interpolate {
        #[command(flatten)]
        frames: FrameArgs,
        #[arg(long, default_value_t = 5)]
        alpha_steps: usize,
    },
    /// Transfer only the pose, only the expression, or both.
    Disentangle {
        #[command(flatten)]
        frames: FrameArgs,
        #[arg(long, default_value = "both")]
        mode: String,
    },
    /// Run the oracle suite.
    Check {
        /// Flip the sign of the Chebyshev recurrence; the spectral check must fail.
        #[arg(long)]
        mutate: bool,
    },
    /// Self-reenactment PSNR and SSIM on the held-out identities.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Per-component inference timings.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        runs: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct FrameArgs {
    #[command(flatten)]
    common: Common,
    /// Source frame index.
    #[arg(long, default_value_t = 0)]
    source: usize,
    /// Driving frame index.
    #[arg(long, default_value_t = 1)]
    driving: usize,
}

enum Failure {
    Check,
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_bad_input(&e) { 2 } else { 1 })
        }
    }
}

fn is_bad_input(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Image(_)
            | Error::InvalidArgument { .. }
            | Error::UnsupportedVersion { .. }
            | Error::MissingParameter(_)
            | Error::ShapeMismatch { .. }
    )
}

fn config_of(common: &Common) -> Result<TrainConfig> {
    let mut c = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if common.dataset.is_some() {
        c.dataset = common.dataset.clone();
    }
    if common.checkpoint.is_some() {
        c.checkpoint = common.checkpoint.clone();
    }
    Ok(c)
}

fn require_checkpoint(common: &Common) -> Result<Model> {
    let path = common
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    load_checkpoint(path)
}

/// The dataset named on the command line, else the one the checkpoint was
/// trained on (regenerated from its config when not on disk).
fn dataset_of(common: &Common, model: &Model) -> Result<Dataset> {
    match &common.dataset {
        Some(dir) => Dataset::load(dir),
        None => dataset_for(&model.config),
    }
}

fn frame_index(dataset: &Dataset, i: usize) -> Result<usize> {
    if i >= dataset.frames.len() {
        return Err(Error::Config(format!(
            "frame {i} out of range (dataset has {})",
            dataset.frames.len()
        )));
    }
    Ok(i)
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}.png"))
}

fn reenact_coeffs(
    model: &Model,
    dataset: &Dataset,
    source: usize,
    driving: &Coefficients,
) -> Result<Image> {
    no_grad(|| {
        let s = &dataset.frames[source];
        let stacked = Generator::stacked_input(&dataset.basis, &s.coefficients, driving)?;
        Image::from_tensor(&model.generator.forward(&s.image.to_tensor(), &[stacked])?)
    })
}

fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::GenData { common } => {
            let mut c = config_of(&common)?;
            if let Some(s) = common.seed {
                c.data_seed = s;
            }
            let out = out_path(&common, "dataset");
            let d = generate_dataset(&c)?;
            d.save(&out)?;
            println!("wrote {} frames to {}", d.frames.len(), out.display());
        }
        Command::Train {
            common,
            steps,
            use_oracle_regressor,
        } => {
            let mut c = config_of(&common)?;
            if let Some(s) = steps {
                c.steps = s;
            }
            c.use_oracle_regressor |= use_oracle_regressor;
            c.validate()?;
            let ckpt = c
                .checkpoint
                .clone()
                .unwrap_or_else(|| PathBuf::from("mgfr.ckpt"));
            let run = run_training(&c, Some(&ckpt))?;
            let log = out_path(&common, "loss_log.csv");
            std::fs::write(&log, &run.outcome.log).map_err(|e| Error::io(&log, e))?;
            if let Some(p) = &run.pretrain {
                println!(
                    "regressor mse: step 0 {:.6}, final {:.6}",
                    p.step0_mse, p.final_mse
                );
            }
            let (head, tail) = run.outcome.head_tail_means(0.1);
            println!("generator loss: first 10% {head:.4}, last 10% {tail:.4}");
            println!("checkpoint {}, loss log {}", ckpt.display(), log.display());
        }
        Command::Reenact { frames } => {
            let model = require_checkpoint(&frames.common)?;
            let dataset = dataset_of(&frames.common, &model)?;
            let (s, d) = (
                frame_index(&dataset, frames.source)?,
                frame_index(&dataset, frames.driving)?,
            );
            let out = reenact_frames(&model.generator, &dataset, s, d)?;
            let path = out_path(&frames.common, "reenact.png");
            out.save_png(&path)?;
            let panel = Image::hconcat(&[
                dataset.frames[s].image.clone(),
                dataset.frames[d].image.clone(),
                out,
            ])?;
            let panel_path = with_suffix(&path, "_panel");
            panel.save_png(&panel_path)?;
            println!("wrote {} and {}", path.display(), panel_path.display());
        }
        Command::Interpolate {
            frames,
            alpha_steps,
        } => {
            if alpha_steps < 2 {
                return Err(Error::Config("--alpha-steps must be at least 2".into()).into());
            }
            let model = require_checkpoint(&frames.common)?;
            let dataset = dataset_of(&frames.common, &model)?;
            let (s, d) = (
                frame_index(&dataset, frames.source)?,
                frame_index(&dataset, frames.driving)?,
            );
            let (cs, cd) = (
                &dataset.frames[s].coefficients,
                &dataset.frames[d].coefficients,
            );
            let mut cells = Vec::with_capacity(alpha_steps);
            for k in 0..alpha_steps {
                let alpha = k as f64 / (alpha_steps - 1) as f64;
                cells.push(reenact_coeffs(
                    &model,
                    &dataset,
                    s,
                    &interpolate_params(cs, cd, alpha)?,
                )?);
            }
            let path = out_path(&frames.common, "interpolate.png");
            Image::hconcat(&cells)?.save_png(&path)?;
            println!("wrote {alpha_steps}-cell strip to {}", path.display());
        }
        Command::Disentangle { frames, mode } => {
            let mode: DriveMode = mode.parse()?;
            let model = require_checkpoint(&frames.common)?;
            let dataset = dataset_of(&frames.common, &model)?;
            let (s, d) = (
                frame_index(&dataset, frames.source)?,
                frame_index(&dataset, frames.driving)?,
            );
            let driving = disentangled_driving(
                &dataset.frames[s].coefficients,
                &dataset.frames[d].coefficients,
                mode,
            );
            let out = reenact_coeffs(&model, &dataset, s, &driving)?;
            let path = out_path(&frames.common, "disentangle.png");
            out.save_png(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Check { mutate } => {
            let results = run_all(mutate)?;
            for r in &results {
                println!("{}", r.line());
            }
            if results.iter().any(|r| !r.passed) {
                return Err(Failure::Check);
            }
        }
        Command::Eval { common } => {
            let model = require_checkpoint(&common)?;
            let dataset = dataset_of(&common, &model)?;
            let report = evaluate(&model, &dataset)?;
            println!("pairs: {}", report.pairs);
            for (name, m) in [
                ("model", &report.model),
                ("copy-source", &report.copy_source),
                ("dataset-mean", &report.dataset_mean),
            ] {
                println!(
                    "{name:<13} PSNR {:.3} ± {:.3} dB, SSIM {:.4} ± {:.4}",
                    m.psnr_summary.mean,
                    m.psnr_summary.std,
                    m.ssim_summary.mean,
                    m.ssim_summary.std
                );
            }
            if let Some(path) = &common.out {
                let json = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Config(e.to_string()))?;
                std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
            }
        }
        Command::Bench { common, runs } => {
            let model = require_checkpoint(&common)?;
            let dataset = dataset_of(&common, &model)?;
            let (s, d) = (
                &dataset.frames[0],
                &dataset.frames[1.min(dataset.frames.len() - 1)],
            );
            let rows = bench(
                &model,
                &dataset.basis,
                &s.coefficients,
                &d.coefficients,
                &s.image.to_tensor(),
                runs,
            )?;
            print!("{}", format_table(&rows));
        }
    }
    Ok(())
}
