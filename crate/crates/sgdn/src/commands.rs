//! The four subcommands. Each one returns the files it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgdn_core::backbone::SgdnModel;
use sgdn_core::checkpoint::{fnv1a, Checkpoint};
use sgdn_core::colorspace::Image;
use sgdn_core::data::{derive_seed, procedural_scene, sample_asm_params, synthesize_haze, HazePair, Split, SplitManifest};
use sgdn_core::metrics::{ImageMetrics, MetricsReport};
use sgdn_core::trainer::{TrainEvent, Trainer};

use crate::config::{read_file_config, resolve, FileConfig, Overrides, RunConfig};
use crate::dataset::{load_paired_dataset, parse_split, read_manifest, GT_DIR, HAZY_DIR, MANIFEST_FILE, PARAMS_DIR};
use crate::error::{Error, Result};
use crate::io::{png_stems, read_png, side_by_side, write_atomic, write_png, BitDepth};
use crate::report::Report;
use crate::runlog::{truncate_after, Record, RunLog};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const REPORT_FILE: &str = "report.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::write(dir))
}

/// Haze parameters stored next to a synthetic pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub stem: String,
    /// `procedural` or the stem of the clean source image.
    pub source: String,
    pub seed: u64,
    pub beta: f64,
    pub airlight: [f64; 3],
    pub depth_min: f64,
    pub depth_max: f64,
}

pub struct SynthesizeArgs {
    pub clean_dir: Option<PathBuf>,
    pub procedural: bool,
    pub size: usize,
    pub count: usize,
    pub val_count: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes `count` synthetic pairs, their sidecars and a split manifest under `out`.
pub fn synthesize(a: &SynthesizeArgs) -> Result<Vec<PathBuf>> {
    if a.procedural == a.clean_dir.is_some() {
        return Err(Error::Invalid("give exactly one of --procedural or --clean-dir".to_string()));
    }
    if a.count == 0 {
        return Err(Error::Invalid("--count must be positive".to_string()));
    }
    if a.val_count > a.count {
        return Err(Error::Invalid(format!("--val-count {} exceeds --count {}", a.val_count, a.count)));
    }
    let sources: Vec<(String, PathBuf)> = match &a.clean_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Error::Invalid(format!("clean image directory {} does not exist", dir.display())));
            }
            let found: Vec<_> = png_stems(dir)?.into_iter().collect();
            if found.is_empty() {
                return Err(Error::Invalid(format!("no PNG images in {}", dir.display())));
            }
            found
        }
        None => Vec::new(),
    };
    for sub in [HAZY_DIR, GT_DIR, PARAMS_DIR] {
        create_dir(&a.out.join(sub))?;
    }
    let mut written = Vec::new();
    let mut stems = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let seed = derive_seed(a.seed, i as u64);
        let (stem, source, clean) = if a.procedural {
            (format!("{i:05}"), "procedural".to_string(), procedural_scene(seed, a.size, a.size)?)
        } else {
            let (name, path) = &sources[i % sources.len()];
            (format!("{i:05}_{name}"), name.clone(), read_png(path)?.0)
        };
        let params = sample_asm_params(derive_seed(seed, 0), clean.height(), clean.width());
        let hazy = synthesize_haze(&clean, &params)?;
        let depth = params.depth.data();
        let sidecar = Sidecar {
            stem: stem.clone(),
            source,
            seed,
            beta: params.beta,
            airlight: params.airlight,
            depth_min: depth.iter().copied().fold(f32::INFINITY, f32::min) as f64,
            depth_max: depth.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64,
        };
        let paths = [
            a.out.join(HAZY_DIR).join(format!("{stem}.png")),
            a.out.join(GT_DIR).join(format!("{stem}.png")),
            a.out.join(PARAMS_DIR).join(format!("{stem}.json")),
        ];
        write_png(&paths[0], &hazy, BitDepth::Eight)?;
        write_png(&paths[1], &clean, BitDepth::Eight)?;
        let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        json.push('\n');
        write_atomic(&paths[2], json.as_bytes())?;
        written.extend(paths);
        stems.push(stem);
    }
    let manifest = SplitManifest::from_stems(&stems, a.count - a.val_count)?;
    let path = a.out.join(MANIFEST_FILE);
    write_atomic(&path, manifest.render().as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Runs `model` over `pairs` and scores it against the clean images.
pub fn evaluate_model(model: &SgdnModel<f32>, pairs: &[HazePair], fingerprint: &str) -> Result<MetricsReport> {
    let images = pairs
        .iter()
        .map(|p| {
            let [pred, _, _] = model.forward(&p.hazy)?;
            ImageMetrics::measure(p.id.clone(), &pred, &p.clean)
        })
        .collect::<sgdn_core::Result<Vec<_>>>()?;
    Ok(MetricsReport::new(images, fingerprint)?)
}

pub fn checkpoint_fingerprint(bytes: &[u8]) -> String {
    format!("checkpoint:{:016x}", fnv1a(bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint<f32>, String)> {
    let bytes = fs::read(path).map_err(Error::read(path))?;
    let ck = Checkpoint::from_bytes(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((ck, checkpoint_fingerprint(&bytes)))
}

/// Rejects a checkpoint whose architecture differs from the configured one.
fn check_architecture(ck: &Checkpoint<f32>, cfg: &RunConfig, path: &Path) -> Result<()> {
    if ck.config != cfg.model_config() {
        return Err(Error::Invalid(format!(
            "checkpoint {} was trained with {:?}, but the configuration asks for {:?}",
            path.display(),
            ck.config,
            cfg.model_config()
        )));
    }
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub resume: bool,
    pub out: PathBuf,
    /// Print progress to stderr.
    pub verbose: bool,
}

/// Resolves the configuration of a training run.
pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let file = match &a.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    resolve(&file, &a.overrides)
}

/// Trains from scratch or resumes from `out/checkpoints/latest.ckpt`.
pub fn train(a: &TrainArgs, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let train_pairs = load_paired_dataset(&cfg.data.root, Split::Train)?;
    let val_pairs = if read_manifest(&cfg.data.root)?.val.is_empty() {
        Vec::new()
    } else {
        load_paired_dataset(&cfg.data.root, Split::Val)?
    };
    let ck_dir = a.out.join(CHECKPOINT_DIR);
    create_dir(&ck_dir)?;
    let config_path = a.out.join(RESOLVED_CONFIG);
    write_atomic(&config_path, cfg.to_toml().as_bytes())?;

    let latest = ck_dir.join(LATEST_CHECKPOINT);
    let log_path = a.out.join(RUN_LOG);
    let mut trainer = if a.resume {
        let (ck, _) = load_checkpoint(&latest)?;
        check_architecture(&ck, cfg, &latest)?;
        truncate_after(&log_path, ck.step)?;
        Trainer::resume(ck, cfg.train_config(), cfg.loss_weights())?
    } else {
        let model = SgdnModel::new(cfg.model_config(), cfg.train.seed)?;
        Trainer::new(model, cfg.train_config(), cfg.loss_weights())?
    };
    let mut log = RunLog::open(&log_path, a.resume)?;
    let mut written = vec![config_path, log_path.clone()];
    let total = cfg.train.steps;
    let every = (total / 20).max(1);
    let result: Result<()> = trainer.run(&train_pairs, |ev| {
        match ev {
            TrainEvent::Step(l) => {
                log.write(&Record::from(l))?;
                if a.verbose && (l.step % every == 0 || l.step + 1 == total) {
                    eprintln!("step {:>6}/{total}  loss {:.4}  lr {:.2e}", l.step + 1, l.total, l.lr);
                }
            }
            TrainEvent::Checkpoint(t) => {
                let bytes = t.checkpoint().to_bytes();
                let path = ck_dir.join(format!("step_{:06}.ckpt", t.step()));
                write_atomic(&path, &bytes)?;
                write_atomic(&latest, &bytes)?;
                if !written.contains(&path) {
                    written.push(path);
                }
                if !val_pairs.is_empty() {
                    let r = evaluate_model(t.model(), &val_pairs, &checkpoint_fingerprint(&bytes))?;
                    log.write(&Record::Val {
                        step: t.step(),
                        psnr: r.mean_psnr,
                        ssim: r.mean_ssim,
                        count: r.count(),
                    })?;
                    if a.verbose {
                        eprintln!("val    {:>6}  psnr {:.2}  ssim {:.4}", t.step(), r.mean_psnr, r.mean_ssim);
                    }
                }
                log.flush()?;
            }
        }
        Ok(())
    });
    log.flush()?;
    result?;
    written.push(latest);
    Ok(written)
}

pub struct DehazeArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub sheet: bool,
    pub gt_dir: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

/// Dehazes every PNG of `input` into `out`, keeping stems and bit depth.
pub fn dehaze(a: &DehazeArgs) -> Result<Vec<PathBuf>> {
    let (ck, _) = load_checkpoint(&a.checkpoint)?;
    if let Some(path) = &a.config {
        let file = read_file_config(path)?;
        let m = &file.model;
        let d = sgdn_core::backbone::ModelConfig::default();
        let wanted = sgdn_core::backbone::ModelConfig {
            base_channels: m.base_channels.unwrap_or(d.base_channels),
            stages: m.blocks_per_stage.as_ref().map_or(d.stages, Vec::len),
            blocks_per_stage: m.blocks_per_stage.clone().unwrap_or(d.blocks_per_stage),
            attn_heads: m.attn_heads.unwrap_or(d.attn_heads),
            large_kernel_size: m.large_kernel_size.unwrap_or(d.large_kernel_size),
        };
        if wanted != ck.config {
            return Err(Error::Invalid(format!(
                "checkpoint {} was trained with {:?}, but {} asks for {:?}",
                a.checkpoint.display(),
                ck.config,
                path.display(),
                wanted
            )));
        }
    }
    let model = ck.model()?;
    if !a.input.is_dir() {
        return Err(Error::Invalid(format!("input directory {} does not exist", a.input.display())));
    }
    let inputs = png_stems(&a.input)?;
    if inputs.is_empty() {
        return Err(Error::Invalid(format!("no PNG images in {}", a.input.display())));
    }
    let gts = match &a.gt_dir {
        Some(dir) => Some(png_stems(dir)?),
        None => None,
    };
    create_dir(&a.out)?;
    let mut written = Vec::new();
    for (stem, path) in &inputs {
        let (hazy, depth) = read_png(path)?;
        let [pred, _, _] = model.forward(&hazy)?;
        let out = a.out.join(format!("{stem}.png"));
        write_png(&out, &pred, depth)?;
        written.push(out);
        if a.sheet {
            let gt = match gts.as_ref().and_then(|g| g.get(stem)) {
                Some(p) => Some(read_png(p)?.0),
                None => None,
            };
            let mut row: Vec<&Image> = vec![&hazy, &pred];
            row.extend(gt.as_ref());
            let sheet = a.out.join(format!("{stem}.sheet.png"));
            write_png(&sheet, &side_by_side(&row), BitDepth::Eight)?;
            written.push(sheet);
        }
    }
    Ok(written)
}

pub struct EvaluateArgs {
    pub checkpoint: Option<PathBuf>,
    pub pred_dir: Option<PathBuf>,
    pub data_root: PathBuf,
    pub split: String,
    pub out: PathBuf,
}

/// Scores a checkpoint or a directory of predictions and writes `report.json`.
pub fn evaluate(a: &EvaluateArgs) -> Result<(Report, Vec<PathBuf>)> {
    let split = parse_split(&a.split)?;
    let pairs = load_paired_dataset(&a.data_root, split)?;
    let model_report = match (&a.checkpoint, &a.pred_dir) {
        (Some(ck_path), None) => {
            let (ck, fp) = load_checkpoint(ck_path)?;
            evaluate_model(&ck.model()?, &pairs, &fp)?
        }
        (None, Some(dir)) => {
            let preds = png_stems(dir)?;
            let mut images = Vec::with_capacity(pairs.len());
            let mut bytes = Vec::new();
            for p in &pairs {
                let path = preds.get(&p.id).ok_or_else(|| {
                    Error::Invalid(format!("no prediction for `{}` in {}", p.id, dir.display()))
                })?;
                bytes.extend(fs::read(path).map_err(Error::read(path))?);
                let (pred, _) = read_png(path)?;
                if (pred.height(), pred.width()) != (p.height(), p.width()) {
                    return Err(Error::Invalid(format!(
                        "prediction `{}` is {}x{}, ground truth is {}x{}",
                        p.id,
                        pred.height(),
                        pred.width(),
                        p.height(),
                        p.width()
                    )));
                }
                images.push(ImageMetrics::measure(p.id.clone(), &pred, &p.clean)?);
            }
            MetricsReport::new(images, format!("predictions:{:016x}", fnv1a(&bytes)))?
        }
        _ => return Err(Error::Invalid("give exactly one of --checkpoint or --pred-dir".to_string())),
    };
    let hazy = pairs
        .iter()
        .map(|p| ImageMetrics::measure(p.id.clone(), &p.hazy, &p.clean))
        .collect::<sgdn_core::Result<Vec<_>>>()?;
    let hazy_report = MetricsReport::new(hazy, "hazy")?;
    let report = Report::new(split.name(), &model_report, &hazy_report);
    create_dir(&a.out)?;
    let path = a.out.join(REPORT_FILE);
    write_atomic(&path, report.to_json().as_bytes())?;
    Ok((report, vec![path]))
}
