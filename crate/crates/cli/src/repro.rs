//! Reproducibility sidecars written next to every output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Repro<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: Option<u64>,
    /// SHA-256 of the compact JSON of `params`.
    pub params_sha256: String,
    pub params: &'a Value,
}

impl<'a> Repro<'a> {
    pub fn new(command: &'a str, seed: Option<u64>, params: &'a Value) -> Self {
        Repro {
            tool: "stereo",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            params_sha256: hex::encode(Sha256::digest(params.to_string().as_bytes())),
            params,
        }
    }
}

/// `<dir>/repro.json` for directories, `<file>.repro.json` otherwise.
pub fn sidecar_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("repro.json")
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".repro.json");
        output.with_file_name(name)
    }
}

pub fn write(output: &Path, repro: &Repro) -> Result<PathBuf> {
    let path = sidecar_path(output);
    let text = serde_json::to_string_pretty(repro)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
