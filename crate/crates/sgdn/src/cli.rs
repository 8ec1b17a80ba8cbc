//! Argument parsing and dispatch for the `sgdn` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::commands::{self, DehazeArgs, EvaluateArgs, SynthesizeArgs, TrainArgs};
use crate::config::{read_file_config, Overrides};
use crate::error::{Error, Result, EXIT_INVALID, EXIT_OK};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "sgdn", version, about = "Dual color space image dehazing")]
pub struct Cli {
    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a paired hazy/clean dataset from clean images or procedural scenes.
    Synthesize(SynthesizeCli),
    /// Train a model on a paired dataset.
    Train(TrainCli),
    /// Dehaze a directory of images with a checkpoint.
    Dehaze(DehazeCli),
    /// Score a checkpoint or a directory of predictions against ground truth.
    Evaluate(EvaluateCli),
}

#[derive(Debug, Args)]
pub struct SynthesizeCli {
    /// Directory of clean PNG images.
    #[arg(long, conflicts_with = "procedural")]
    pub clean_dir: Option<PathBuf>,
    /// Generate clean scenes instead of reading them.
    #[arg(long)]
    pub procedural: bool,
    /// Side length of procedural scenes.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Number of pairs.
    #[arg(long)]
    pub count: usize,
    /// How many of the pairs go to the validation split.
    #[arg(long, default_value_t = 0)]
    pub val_count: usize,
}

#[derive(Debug, Args)]
pub struct TrainCli {
    /// default, smoke or desk.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, env = "SGDN_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// constant or cosine.
    #[arg(long)]
    pub lr_schedule: Option<String>,
    /// full, baseline, bgb, cem, pim or iam.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DehazeCli {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of hazy PNG images.
    #[arg(long)]
    pub in_dir: PathBuf,
    /// Also write hazy | dehazed | ground truth comparison sheets.
    #[arg(long)]
    pub sheet: bool,
    /// Ground truth images for the sheets, matched by stem.
    #[arg(long, requires = "sheet")]
    pub gt_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateCli {
    #[arg(long, conflicts_with = "pred_dir", required_unless_present = "pred_dir")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of predicted PNG images named after the dataset stems.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    #[arg(long, env = "SGDN_DATA_ROOT")]
    pub data_root: Option<PathBuf>,
    /// train or val.
    #[arg(long, default_value = "val")]
    pub split: String,
}

fn require_out(out: &Option<PathBuf>) -> Result<PathBuf> {
    out.clone().ok_or_else(|| Error::Invalid("--out is required".to_string()))
}

fn paths_json(p: &Option<PathBuf>) -> serde_json::Value {
    p.as_ref().map_or(serde_json::Value::Null, |p| json!(p))
}

/// Runs one command; the manifest is written to the output directory whatever the outcome.
fn dispatch(cli: Cli) -> Result<()> {
    let out = require_out(&cli.out)?;
    let (name, seed) = match &cli.command {
        Command::Synthesize(_) => ("synthesize", Some(cli.seed.unwrap_or(0))),
        Command::Train(_) => ("train", cli.seed),
        Command::Dehaze(_) => ("dehaze", None),
        Command::Evaluate(_) => ("evaluate", None),
    };
    let mut manifest = RunManifest::start(name, seed);
    let result = execute(&cli, &out, &mut manifest);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    if out.is_dir() || std::fs::create_dir_all(&out).is_ok() {
        let written = manifest.write(&out, &status);
        if result.is_ok() {
            written?;
        }
    }
    result
}

fn execute(cli: &Cli, out: &std::path::Path, manifest: &mut RunManifest) -> Result<()> {
    match &cli.command {
        Command::Synthesize(s) => {
            let args = SynthesizeArgs {
                clean_dir: s.clean_dir.clone(),
                procedural: s.procedural,
                size: s.size,
                count: s.count,
                val_count: s.val_count,
                seed: cli.seed.unwrap_or(0),
                out: out.to_path_buf(),
            };
            manifest.resolved_config = json!({
                "clean_dir": paths_json(&s.clean_dir),
                "procedural": s.procedural,
                "size": s.size,
                "count": s.count,
                "val_count": s.val_count,
                "seed": args.seed,
            });
            manifest.outputs = commands::synthesize(&args)?;
            println!("wrote {} pairs to {}", s.count, out.display());
        }
        Command::Train(t) => {
            let args = TrainArgs {
                config: cli.config.clone(),
                overrides: Overrides {
                    preset: t.preset.clone(),
                    data_root: t.data_root.clone(),
                    steps: t.steps,
                    batch: t.batch,
                    patch: t.patch,
                    lr: t.lr,
                    lr_schedule: t.lr_schedule.clone(),
                    seed: cli.seed,
                    ablation: t.ablation.clone(),
                    checkpoint_every: t.checkpoint_every,
                    grad_clip: t.grad_clip,
                },
                resume: t.resume,
                out: out.to_path_buf(),
                verbose: !t.quiet,
            };
            let cfg = commands::train_config(&args)?;
            manifest.seed = Some(cfg.train.seed);
            manifest.resolved_config = serde_json::to_value(&cfg).expect("config serializes");
            manifest.outputs = commands::train(&args, &cfg)?;
            println!("trained {} steps; checkpoints in {}", cfg.train.steps, out.join(commands::CHECKPOINT_DIR).display());
        }
        Command::Dehaze(d) => {
            let args = DehazeArgs {
                checkpoint: d.checkpoint.clone(),
                input: d.in_dir.clone(),
                out: out.to_path_buf(),
                sheet: d.sheet,
                gt_dir: d.gt_dir.clone(),
                config: cli.config.clone(),
            };
            manifest.resolved_config = json!({
                "checkpoint": d.checkpoint,
                "in_dir": d.in_dir,
                "sheet": d.sheet,
                "gt_dir": paths_json(&d.gt_dir),
            });
            manifest.outputs = commands::dehaze(&args)?;
            println!("dehazed {} images into {}", manifest.outputs.iter().filter(|p| !is_sheet(p)).count(), out.display());
        }
        Command::Evaluate(e) => {
            let data_root = match (&e.data_root, &cli.config) {
                (Some(r), _) => r.clone(),
                (None, Some(c)) => read_file_config(c)?.data.root.ok_or_else(|| {
                    Error::Invalid(format!("{} has no [data] root and --data-root is not set", c.display()))
                })?,
                (None, None) => return Err(Error::Invalid("no dataset root given (--data-root or SGDN_DATA_ROOT)".to_string())),
            };
            let args = EvaluateArgs {
                checkpoint: e.checkpoint.clone(),
                pred_dir: e.pred_dir.clone(),
                data_root,
                split: e.split.clone(),
                out: out.to_path_buf(),
            };
            manifest.resolved_config = json!({
                "checkpoint": paths_json(&e.checkpoint),
                "pred_dir": paths_json(&e.pred_dir),
                "data_root": args.data_root,
                "split": e.split,
            });
            let (report, outputs) = commands::evaluate(&args)?;
            manifest.outputs = outputs;
            let m = &report.summary.model;
            let h = &report.summary.hazy;
            let inf = if m.psnr_infinite > 0 { format!(" ({} exact)", m.psnr_infinite) } else { String::new() };
            println!(
                "{} images: psnr {:.2} dB{inf}, ssim {:.4} (hazy input: psnr {:.2} dB, ssim {:.4})",
                report.count, m.psnr, m.ssim, h.psnr, h.ssim
            );
        }
    }
    Ok(())
}

fn is_sheet(p: &std::path::Path) -> bool {
    p.to_string_lossy().ends_with(".sheet.png")
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
