//! Evaluation report document.
//!
//! ```json
//! {
//!   "schema": "sgdn-report/1",
//!   "split": "val",
//!   "fingerprint": "checkpoint:5f0c...",
//!   "count": 2,
//!   "summary": {
//!     "model": {"psnr": 24.1, "ssim": 0.83, "psnr_infinite": 0},
//!     "hazy":  {"psnr": 14.2, "ssim": 0.61, "psnr_infinite": 0}
//!   },
//!   "images": [
//!     {"id": "a", "psnr": 24.0, "psnr_infinite": false, "ssim": 0.82,
//!      "hazy_psnr": 14.0, "hazy_psnr_infinite": false, "hazy_ssim": 0.6,
//!      "fade": null, "niqe": null}
//!   ]
//! }
//! ```
//!
//! `fade` and `niqe` are reserved for externally computed no-reference scores.

use serde::Serialize;
use sgdn_core::metrics::MetricsReport;

pub const SCHEMA: &str = "sgdn-report/1";

#[derive(Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub split: String,
    pub fingerprint: String,
    pub count: usize,
    pub summary: Summary,
    pub images: Vec<ImageRecord>,
}

#[derive(Serialize)]
pub struct Summary {
    pub model: Means,
    pub hazy: Means,
}

#[derive(Serialize)]
pub struct Means {
    pub psnr: f64,
    pub ssim: f64,
    /// Number of images whose PSNR was capped because they matched exactly.
    pub psnr_infinite: usize,
}

#[derive(Serialize)]
pub struct ImageRecord {
    pub id: String,
    pub psnr: f64,
    pub psnr_infinite: bool,
    pub ssim: f64,
    pub hazy_psnr: f64,
    pub hazy_psnr_infinite: bool,
    pub hazy_ssim: f64,
    pub fade: Option<f64>,
    pub niqe: Option<f64>,
}

fn means(r: &MetricsReport) -> Means {
    Means {
        psnr: r.mean_psnr,
        ssim: r.mean_ssim,
        psnr_infinite: r.images.iter().filter(|m| m.psnr.infinite).count(),
    }
}

impl Report {
    /// Pairs model metrics with the metrics of the untouched hazy inputs.
    pub fn new(split: &str, model: &MetricsReport, hazy: &MetricsReport) -> Self {
        let images = model
            .images
            .iter()
            .zip(&hazy.images)
            .map(|(m, h)| ImageRecord {
                id: m.id.clone(),
                psnr: m.psnr.db,
                psnr_infinite: m.psnr.infinite,
                ssim: m.ssim,
                hazy_psnr: h.psnr.db,
                hazy_psnr_infinite: h.psnr.infinite,
                hazy_ssim: h.ssim,
                fade: None,
                niqe: None,
            })
            .collect();
        Self {
            schema: SCHEMA,
            split: split.to_string(),
            fingerprint: model.fingerprint.clone(),
            count: model.count(),
            summary: Summary {
                model: means(model),
                hazy: means(hazy),
            },
            images,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
