//! Run configuration: TOML file, presets and command line overrides.
//!
//! Resolution order, lowest to highest precedence: preset, file, command
//! line (including the `SGDN_DATA_ROOT` environment variable).
//!
//! ```toml
//! preset = "smoke"            # default | smoke | desk
//! [data]
//! root = "data/desk"
//! [model]
//! base_channels = 24
//! blocks_per_stage = [2, 2, 4]
//! attn_heads = 4
//! large_kernel_size = 7
//! [train]
//! steps = 5000
//! batch = 4
//! patch = 64
//! lr = 2e-4
//! lr_schedule = "cosine"      # constant | cosine
//! seed = 0
//! ablation = "full"           # full | baseline | bgb | cem | pim | iam, or a flag table
//! checkpoint_every = 1000
//! grad_clip = 1.0
//! [loss]
//! eta = 1.0
//! theta = 0.5
//! lambda = 0.1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgdn_core::backbone::{Ablation, ModelConfig};
use sgdn_core::losses::LossWeights;
use sgdn_core::trainer::{LrSchedule, TrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub loss: LossSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub root: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub base_channels: Option<usize>,
    pub blocks_per_stage: Option<Vec<usize>>,
    pub attn_heads: Option<usize>,
    pub large_kernel_size: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<u64>,
    pub batch: Option<usize>,
    pub patch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_schedule: Option<String>,
    pub seed: Option<u64>,
    pub ablation: Option<AblationSpec>,
    pub checkpoint_every: Option<u64>,
    pub grad_clip: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub eta: Option<f64>,
    pub theta: Option<f64>,
    pub lambda: Option<f64>,
}

/// A named ablation preset or explicit flags.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AblationSpec {
    Preset(String),
    Flags(AblationFlags),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub use_bgb: bool,
    pub use_pim: bool,
    pub use_iam: bool,
    pub use_cem: bool,
}

impl From<Ablation> for AblationFlags {
    fn from(a: Ablation) -> Self {
        Self {
            use_bgb: a.use_bgb,
            use_pim: a.use_pim,
            use_iam: a.use_iam,
            use_cem: a.use_cem,
        }
    }
}

impl From<AblationFlags> for Ablation {
    fn from(a: AblationFlags) -> Self {
        Self {
            use_bgb: a.use_bgb,
            use_pim: a.use_pim,
            use_iam: a.use_iam,
            use_cem: a.use_cem,
        }
    }
}

pub const ABLATION_PRESETS: [&str; 6] = ["full", "baseline", "bgb", "cem", "pim", "iam"];

/// Flags of a named ablation preset.
pub fn ablation_preset(name: &str) -> Option<Ablation> {
    let off = Ablation::BASELINE;
    Some(match name {
        "full" => Ablation::FULL,
        "baseline" => off,
        "bgb" => Ablation { use_bgb: true, use_pim: true, use_iam: true, ..off },
        "cem" => Ablation { use_cem: true, ..off },
        "pim" => Ablation { use_bgb: true, use_pim: true, ..off },
        "iam" => Ablation { use_bgb: true, use_iam: true, ..off },
        _ => return None,
    })
}

pub const PRESETS: [&str; 3] = ["default", "smoke", "desk"];

/// Training settings of a named preset.
pub fn preset(name: &str) -> Option<TrainConfig> {
    let base = TrainConfig::default();
    Some(match name {
        "default" => base,
        "smoke" => TrainConfig {
            steps: 100,
            batch: 2,
            checkpoint_every: 50,
            ..base
        },
        "desk" => TrainConfig {
            steps: 5000,
            batch: 2,
            checkpoint_every: 1000,
            ..base
        },
        _ => return None,
    })
}

/// Command line values that override the file, one per [`TrainConfig`] field.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub data_root: Option<PathBuf>,
    pub steps: Option<u64>,
    pub batch: Option<usize>,
    pub patch: Option<usize>,
    pub lr: Option<f64>,
    pub lr_schedule: Option<String>,
    pub seed: Option<u64>,
    pub ablation: Option<String>,
    pub checkpoint_every: Option<u64>,
    pub grad_clip: Option<f64>,
}

/// Fully resolved settings of a training run, echoed next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: String,
    pub data: ResolvedData,
    pub model: ResolvedModel,
    pub train: ResolvedTrain,
    pub loss: ResolvedLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedData {
    pub root: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedModel {
    pub base_channels: usize,
    pub blocks_per_stage: Vec<usize>,
    pub attn_heads: usize,
    pub large_kernel_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedTrain {
    pub steps: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub lr_schedule: String,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub checkpoint_every: u64,
    pub grad_clip: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedLoss {
    pub eta: f64,
    pub theta: f64,
    pub lambda: f64,
}

fn schedule_name(s: LrSchedule) -> &'static str {
    match s {
        LrSchedule::Constant => "constant",
        LrSchedule::Cosine => "cosine",
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            base_channels: self.model.base_channels,
            stages: self.model.blocks_per_stage.len(),
            blocks_per_stage: self.model.blocks_per_stage.clone(),
            attn_heads: self.model.attn_heads,
            large_kernel_size: self.model.large_kernel_size,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch: t.batch,
            patch: t.patch,
            lr: t.lr,
            lr_schedule: if t.lr_schedule == "constant" { LrSchedule::Constant } else { LrSchedule::Cosine },
            seed: t.seed,
            ablation: t.ablation.into(),
            checkpoint_every: t.checkpoint_every,
            grad_clip: t.grad_clip,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            eta: self.loss.eta,
            theta: self.loss.theta,
            lambda: self.loss.lambda,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }
}

pub fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(Error::read(path))?;
    toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))
}

/// Merges preset, file and overrides, then checks every constraint.
/// All problems are reported together.
pub fn resolve(file: &FileConfig, over: &Overrides) -> Result<RunConfig> {
    let mut problems = Vec::new();
    let preset_name = over.preset.clone().or_else(|| file.preset.clone()).unwrap_or_else(|| "default".to_string());
    let base = preset(&preset_name).unwrap_or_else(|| {
        problems.push(format!("unknown preset `{preset_name}` (expected one of {})", PRESETS.join(", ")));
        TrainConfig::default()
    });
    let t = &file.train;

    let schedule = over.lr_schedule.clone().or_else(|| t.lr_schedule.clone()).unwrap_or_else(|| schedule_name(base.lr_schedule).to_string());
    if schedule != "constant" && schedule != "cosine" {
        problems.push(format!("lr_schedule must be `constant` or `cosine`, got `{schedule}`"));
    }
    let spec = match &over.ablation {
        Some(name) => Some(AblationSpec::Preset(name.clone())),
        None => t.ablation.clone(),
    };
    let ablation = match spec {
        None => base.ablation,
        Some(AblationSpec::Flags(f)) => f.into(),
        Some(AblationSpec::Preset(name)) => ablation_preset(&name).unwrap_or_else(|| {
            problems.push(format!("unknown ablation preset `{name}` (expected one of {})", ABLATION_PRESETS.join(", ")));
            Ablation::FULL
        }),
    };
    let train = ResolvedTrain {
        steps: over.steps.or(t.steps).unwrap_or(base.steps),
        batch: over.batch.or(t.batch).unwrap_or(base.batch),
        patch: over.patch.or(t.patch).unwrap_or(base.patch),
        lr: over.lr.or(t.lr).unwrap_or(base.lr),
        lr_schedule: schedule,
        seed: over.seed.or(t.seed).unwrap_or(base.seed),
        ablation: ablation.into(),
        checkpoint_every: over.checkpoint_every.or(t.checkpoint_every).unwrap_or(base.checkpoint_every),
        grad_clip: over.grad_clip.or(t.grad_clip).unwrap_or(base.grad_clip),
    };

    let dm = ModelConfig::default();
    let m = &file.model;
    let model = ResolvedModel {
        base_channels: m.base_channels.unwrap_or(dm.base_channels),
        blocks_per_stage: m.blocks_per_stage.clone().unwrap_or(dm.blocks_per_stage),
        attn_heads: m.attn_heads.unwrap_or(dm.attn_heads),
        large_kernel_size: m.large_kernel_size.unwrap_or(dm.large_kernel_size),
    };
    let dl = LossWeights::default();
    let loss = ResolvedLoss {
        eta: file.loss.eta.unwrap_or(dl.eta),
        theta: file.loss.theta.unwrap_or(dl.theta),
        lambda: file.loss.lambda.unwrap_or(dl.lambda),
    };
    let root = over.data_root.clone().or_else(|| file.data.root.clone());
    let root = match root {
        Some(r) => {
            if !r.is_dir() {
                problems.push(format!("dataset root {} does not exist", r.display()));
            }
            r
        }
        None => {
            problems.push("no dataset root given ([data] root, --data-root or SGDN_DATA_ROOT)".to_string());
            PathBuf::new()
        }
    };

    let cfg = RunConfig {
        preset: preset_name,
        data: ResolvedData { root },
        model,
        train,
        loss,
    };
    problems.extend(cfg.train_config().problems().into_iter().map(|e| e.to_string()));
    if let Err(e) = cfg.model_config().validate() {
        problems.push(e.to_string());
    }
    if let Err(e) = cfg.loss_weights().validate() {
        problems.push(e.to_string());
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}
