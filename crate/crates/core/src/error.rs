use alloc::string::String;
use alloc::vec::Vec;

use crate::colorspace::ColorSpace;

/// Errors produced by the dehazing core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SgdnError {
    #[error("{context}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{context}: input contains NaN or infinite values")]
    NonFinite { context: &'static str },
    #[error("expected a {expected:?} image, got {found:?}")]
    WrongColorSpace { expected: ColorSpace, found: ColorSpace },
    #[error("spectral amplitude must be non-negative (found {value})")]
    NegativeAmplitude { value: f64 },
    #[error("image of {height}x{width} is smaller than the {min}x{min} minimum")]
    ImageTooSmall { height: usize, width: usize, min: usize },
    #[error("{name} must be non-negative (got {value})")]
    NegativeParameter { name: &'static str, value: f64 },
    #[error("patch size {patch} exceeds image {height}x{width} of pair `{id}`")]
    PatchTooLarge {
        patch: usize,
        height: usize,
        width: usize,
        id: String,
    },
    #[error("channel count {channels} is not divisible by {heads} attention heads")]
    HeadMismatch { channels: usize, heads: usize },
    #[error("expected {expected} scales, got {got}")]
    ScaleSetMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent ablation flags: {0}")]
    InconsistentAblation(String),
    #[error("non-finite {term} at step {step}; lower the learning rate or tighten gradient clipping")]
    NonFiniteLoss { step: u64, term: &'static str },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split manifest: {0}")]
    Manifest(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
}

pub type Result<T, E = SgdnError> = core::result::Result<T, E>;
