//! Full-reference image quality: PSNR and SSIM on `[0, 1]` RGB.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::colorspace::Image;
use crate::error::{Result, SgdnError};
use crate::losses;

/// MSE below which two images count as identical.
pub const MSE_FLOOR: f64 = 1e-12;
/// PSNR reported for identical images: the value at [`MSE_FLOOR`] with unit peak.
pub const PSNR_SENTINEL: f64 = 120.0;

/// A PSNR value in dB. `infinite` marks identical inputs, reported as [`PSNR_SENTINEL`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr {
    pub db: f64,
    pub infinite: bool,
}

pub fn psnr(pred: &Image, gt: &Image, peak: f64) -> Result<Psnr> {
    if pred.pixels().shape() != gt.pixels().shape() {
        return Err(SgdnError::ShapeMismatch {
            context: "psnr",
            expected: gt.pixels().shape().to_vec(),
            got: pred.pixels().shape().to_vec(),
        });
    }
    let n = pred.pixels().len() as f64;
    let mse = pred
        .pixels()
        .data()
        .iter()
        .zip(gt.pixels().data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse < MSE_FLOOR {
        return Ok(Psnr {
            db: PSNR_SENTINEL.max(10.0 * Float::log10(peak * peak / MSE_FLOOR)),
            infinite: true,
        });
    }
    Ok(Psnr {
        db: 10.0 * Float::log10(peak * peak / mse),
        infinite: false,
    })
}

/// Mean local SSIM, equal to `1 - losses::ssim_loss`.
pub fn ssim_metric(pred: &Image, gt: &Image) -> Result<f64> {
    losses::ssim_value(pred, gt)
}

/// Metrics of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

impl ImageMetrics {
    pub fn measure(id: impl Into<String>, pred: &Image, gt: &Image) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            psnr: psnr(pred, gt, 1.0)?,
            ssim: ssim_metric(pred, gt)?,
        })
    }
}

/// Per-image metrics plus their arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Identifies the model and configuration that produced the predictions.
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn new(images: Vec<ImageMetrics>, fingerprint: impl Into<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(SgdnError::EmptyDataset);
        }
        let n = images.len() as f64;
        let mean_psnr = images.iter().map(|m| m.psnr.db).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n;
        Ok(Self {
            images,
            mean_psnr,
            mean_ssim,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn count(&self) -> usize {
        self.images.len()
    }

    /// True when every image matched its reference exactly.
    pub fn all_infinite(&self) -> bool {
        self.images.iter().all(|m| m.psnr.infinite)
    }
}
