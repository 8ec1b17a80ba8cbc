//! `run_manifest.json`: one per command invocation.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::Result;
use crate::io::write_atomic;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub resolved_config: serde_json::Value,
    pub seed: Option<u64>,
    pub code_version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub status: String,
    pub outputs: Vec<PathBuf>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            resolved_config: serde_json::Value::Null,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: unix_now(),
            finished_at: 0,
            status: "running".to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, out_dir: &Path, status: &str) -> Result<()> {
        self.finished_at = unix_now();
        self.status = status.to_string();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&out_dir.join(MANIFEST_NAME), text.as_bytes())
    }
}
