//! Deterministic training loop.
//!
//! The batch for step `k` is a pure function of `(seed, k)` and the optimizer
//! state is part of every checkpoint, so a resumed run reproduces the loss
//! trajectory of an uninterrupted one.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::{Exec, Graph};
use crate::backbone::{Ablation, SgdnModel, ALIGN};
use crate::checkpoint::Checkpoint;
use crate::data::{make_training_batch, HazePair};
use crate::error::{Result, SgdnError};
use crate::losses::{gt_pyramid, total_loss_in, LossWeights, SSIM_WINDOW};
use crate::optim::{clip_global_norm, Adam};
use crate::tensor::Tensor;

/// Smallest patch whose quarter-scale output still fits the SSIM window.
pub const MIN_PATCH: usize = (SSIM_WINDOW * 4).div_ceil(ALIGN) * ALIGN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from `lr` to `lr / 100` over the run.
    Cosine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub ablation: Ablation,
    /// Checkpoint cadence in steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    /// Global gradient norm cap.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 4,
            patch: 64,
            lr: 2e-4,
            lr_schedule: LrSchedule::Cosine,
            seed: 0,
            ablation: Ablation::FULL,
            checkpoint_every: 1000,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<SgdnError> {
        let mut out = Vec::new();
        let mut bad = |msg: alloc::string::String| out.push(SgdnError::InvalidConfig(msg));
        if self.steps == 0 {
            bad("steps must be positive".to_string());
        }
        if self.batch == 0 {
            bad("batch must be positive".to_string());
        }
        if self.patch < MIN_PATCH || self.patch % ALIGN != 0 {
            bad(format!("patch must be a multiple of {ALIGN} and at least {MIN_PATCH}, got {}", self.patch));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        if !(self.grad_clip > 0.0) {
            bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if let Err(e) = self.ablation.validate() {
            out.push(e);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Learning rate used for the update at 0-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let lo = self.lr / 100.0;
                let t = step as f64 / self.steps.max(1) as f64;
                lo + 0.5 * (self.lr - lo) * (1.0 + Float::cos(core::f64::consts::PI * t.min(1.0)))
            }
        }
    }
}

/// Loss terms of one update (each summed over the three scales).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub l1: f64,
    pub ssim: f64,
    pub fft: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub enum TrainEvent<'a> {
    Step(&'a StepLog),
    /// Raised every `checkpoint_every` steps and after the last step.
    Checkpoint(&'a Trainer),
}

/// Disables modules according to `flags`.
pub fn apply_ablation(mut model: SgdnModel<f32>, flags: Ablation) -> Result<SgdnModel<f32>> {
    model.set_ablation(flags)?;
    Ok(model)
}

/// Model, optimizer state and position of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: SgdnModel<f32>,
    opt: Adam<f32>,
    cfg: TrainConfig,
    weights: LossWeights,
    step: u64,
}

impl Trainer {
    /// Starts a run; the model's ablation flags are replaced by `cfg.ablation`.
    pub fn new(model: SgdnModel<f32>, cfg: TrainConfig, weights: LossWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        let model = apply_ablation(model, cfg.ablation)?;
        let opt = Adam::new(model.params());
        Ok(Self {
            model,
            opt,
            cfg,
            weights,
            step: 0,
        })
    }

    /// Continues a run from a checkpoint that carries optimizer state.
    pub fn resume(ck: Checkpoint<f32>, cfg: TrainConfig, weights: LossWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        if ck.ablation != cfg.ablation {
            return Err(SgdnError::InvalidConfig(format!(
                "checkpoint ablation {:?} differs from configured {:?}",
                ck.ablation, cfg.ablation
            )));
        }
        let model = ck.model()?;
        let opt = ck
            .optimizer
            .ok_or_else(|| SgdnError::Checkpoint("no optimizer state to resume from".to_string()))?;
        if !opt.fits(model.params()) {
            return Err(SgdnError::Checkpoint("optimizer state does not match the parameters".to_string()));
        }
        Ok(Self {
            model,
            opt,
            cfg,
            weights,
            step: ck.step,
        })
    }

    pub fn model(&self) -> &SgdnModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> SgdnModel<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.opt
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint::from_model(&self.model, self.step, Some(&self.opt))
    }

    /// Loss terms and gradients of one batch, without updating.
    pub fn loss_and_grads(&self, hazy: &Tensor<f32>, clean: &Tensor<f32>) -> Result<(StepLog, Vec<Option<Tensor<f32>>>)> {
        let mut g = Graph::new(self.model.params());
        let preds = self.model.forward_in(&mut g, hazy)?;
        let terms = total_loss_in(&mut g, &preds, &gt_pyramid(clean), &self.weights)?;
        let read = |g: &Graph<'_, f32>, v| g.value(v).item() as f64;
        let log = StepLog {
            step: self.step,
            lr: 0.0,
            total: read(&g, &terms.total),
            l1: read(&g, &terms.l1),
            ssim: read(&g, &terms.ssim),
            fft: read(&g, &terms.fft),
            grad_norm: 0.0,
        };
        for (term, v) in [("l1 loss", log.l1), ("ssim loss", log.ssim), ("fft loss", log.fft), ("total loss", log.total)] {
            if !v.is_finite() {
                return Err(SgdnError::NonFiniteLoss { step: self.step, term });
            }
        }
        Ok((log, g.backward(terms.total).into_params()))
    }

    /// One clipped Adam update on an explicit batch with learning rate `lr`.
    pub fn step_on(&mut self, hazy: &Tensor<f32>, clean: &Tensor<f32>, lr: f64) -> Result<StepLog> {
        let (mut log, mut grads) = self.loss_and_grads(hazy, clean)?;
        log.lr = lr;
        log.grad_norm = clip_global_norm(&mut grads, self.cfg.grad_clip);
        if !log.grad_norm.is_finite() {
            return Err(SgdnError::NonFiniteLoss {
                step: self.step,
                term: "gradient norm",
            });
        }
        self.opt.update(self.model.params_mut(), &grads, lr);
        self.step += 1;
        Ok(log)
    }

    /// The next scheduled update, on the batch drawn for this step.
    pub fn train_step(&mut self, data: &[HazePair]) -> Result<StepLog> {
        let b = make_training_batch(data, self.cfg.patch, self.cfg.batch, self.cfg.seed, self.step)?;
        let lr = self.cfg.lr_at(self.step);
        self.step_on(&b.hazy, &b.clean, lr)
    }

    /// Trains until `cfg.steps` updates have been applied. Errors from
    /// `on_event` stop the run and are returned as is.
    pub fn run<E: From<SgdnError>>(
        &mut self,
        data: &[HazePair],
        mut on_event: impl FnMut(TrainEvent<'_>) -> core::result::Result<(), E>,
    ) -> core::result::Result<(), E> {
        if data.is_empty() {
            return Err(SgdnError::EmptyDataset.into());
        }
        while self.step < self.cfg.steps {
            let log = self.train_step(data)?;
            on_event(TrainEvent::Step(&log))?;
            let every = self.cfg.checkpoint_every;
            if self.step == self.cfg.steps || (every > 0 && self.step % every == 0) {
                on_event(TrainEvent::Checkpoint(self))?;
            }
        }
        Ok(())
    }
}

/// Trains `model` on `data` and returns it with the per-step log.
pub fn train(model: SgdnModel<f32>, data: &[HazePair], weights: LossWeights, cfg: TrainConfig) -> Result<(SgdnModel<f32>, Vec<StepLog>)> {
    let mut t = Trainer::new(model, cfg, weights)?;
    let mut logs = Vec::new();
    t.run(data, |ev| {
        if let TrainEvent::Step(l) = ev {
            logs.push(*l);
        }
        Ok(())
    })?;
    Ok((t.into_model(), logs))
}
