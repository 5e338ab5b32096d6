//! Run manifests: every command that writes outputs records what it ran,
//! on which inputs, and how long each stage took.
//!
//! Manifests are the one output exempt from byte-identical reproducibility
//! (timings vary); everything else a command writes must be deterministic
//! for a fixed seed at --threads 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, Ctx};

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    /// SHA-256 of the fully resolved configuration (after flag overrides),
    /// when the command has one.
    pub config_sha256: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(ctx: &Ctx) -> Self {
        RunManifest {
            tool: "qsmforge",
            version: env!("CARGO_PKG_VERSION"),
            command: ctx.argv.clone(),
            seed: ctx.seed,
            threads: ctx.threads,
            config_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn config_bytes(&mut self, bytes: &[u8]) {
        self.config_sha256 = Some(sha256_hex(bytes));
    }

    pub fn input(&mut self, path: &Path) -> CliResult {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn timing(&mut self, stage: &'static str, since: Instant) {
        self.timings.push(StageTiming { stage, ms: since.elapsed().as_secs_f64() * 1e3 });
    }

    /// Serializes to `path` (pretty JSON + trailing newline).
    pub fn write(&self, path: &Path) -> CliResult {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::data(format!("manifest serialization: {e}")))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::in_file(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::in_file(path, e))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

/// Manifest path for a command whose primary output is the file `out`:
/// `foo.qvol` gets `foo.manifest.json` next to it.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.manifest.json"))
}
