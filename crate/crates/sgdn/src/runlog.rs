//! JSON-lines training log, one record per line.
//!
//! ```text
//! {"kind":"step","step":0,"lr":0.0002,"total":2.53,"l1":0.75,"ssim":2.16,"fft":6.96,"grad_norm":9.09}
//! {"kind":"val","step":1000,"psnr":21.3,"ssim":0.71,"count":20}
//! ```
//!
//! `step` in a step record is the 0-based index of the update; in a
//! validation record it is the number of updates applied. Records carry no
//! timestamps, so identical runs produce identical logs.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sgdn_core::trainer::StepLog;

use crate::error::{Error, Result};

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Step {
        step: u64,
        lr: f64,
        total: f64,
        l1: f64,
        ssim: f64,
        fft: f64,
        grad_norm: f64,
    },
    Val {
        step: u64,
        psnr: f64,
        ssim: f64,
        count: usize,
    },
}

impl From<&StepLog> for Record {
    fn from(l: &StepLog) -> Self {
        Record::Step {
            step: l.step,
            lr: l.lr,
            total: l.total,
            l1: l.l1,
            ssim: l.ssim,
            fft: l.fft,
            grad_norm: l.grad_norm,
        }
    }
}

pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLog {
    /// Opens the log; `append` continues an existing file when resuming.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(Error::write(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, r: &Record) -> Result<()> {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(self.out, "{line}").map_err(Error::write(&self.path))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(Error::write(&self.path))
    }
}

/// Drops every record past update `step`, so that a resumed run continues a clean log.
pub fn truncate_after(path: &Path, step: u64) -> Result<()> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(());
    };
    let keep: String = text
        .lines()
        .filter(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap_or_default();
            let s = v.get("step").and_then(|s| s.as_u64()).unwrap_or(0);
            match v.get("kind").and_then(|k| k.as_str()) {
                Some("step") => s < step,
                _ => s <= step,
            }
        })
        .map(|l| format!("{l}\n"))
        .collect();
    crate::io::write_atomic(path, keep.as_bytes())
}
