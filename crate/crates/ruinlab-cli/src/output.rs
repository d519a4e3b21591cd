//! Atomic output files, run manifests and numeric formatting.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::Instant;

/// Format a float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sidecar emitted with every output file; identical manifests (up to the
/// wall-clock field) identify reproducible runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub parameters: Vec<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutputWriter {
    started: Instant,
    command: String,
    config_sha256: Option<String>,
    seed: Option<u64>,
    parameters: Vec<String>,
}

impl OutputWriter {
    pub fn new(command: &str, config_bytes: Option<&[u8]>, seed: Option<u64>) -> Self {
        OutputWriter {
            started: Instant::now(),
            command: command.to_string(),
            config_sha256: config_bytes.map(sha256_hex),
            seed,
            parameters: std::env::args().skip(1).collect(),
        }
    }

    /// Write `content` atomically (temp file + rename) together with its
    /// manifest sidecar `<path>.manifest.json`.
    pub fn write(&self, path: &Path, content: &str) -> std::io::Result<()> {
        write_atomic(path, content.as_bytes())?;
        let manifest = RunManifest {
            command: self.command.clone(),
            config_sha256: self.config_sha256.clone(),
            seed: self.seed,
            parameters: self.parameters.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let manifest_path = manifest_path(path);
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&manifest_path, body.as_bytes())
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "tmp.{}",
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
