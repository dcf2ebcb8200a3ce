//! Run manifest kept next to every artifact: effective config, stage seeds,
//! input digests and artifact paths.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chargefill::config::Config;
use chargefill::seeds;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

/// Labels of the per-stage random streams derived from the root seed.
const STAGE_LABELS: [&str; 7] = ["split", "model", "train", "stub-embedder", "fidelity-ls", "fidelity-dm", "maskgen"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Artifact name to path.
    pub artifacts: BTreeMap<String, String>,
    /// Commands that contributed, in order.
    pub commands: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Directory holding the manifest for an artifact at `path`.
pub fn dir_for(path: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return path.to_path_buf();
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

impl RunManifest {
    pub fn load_or_default(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.to_string(), path.display().to_string());
    }

    /// Recomputes every input digest; returns the paths that changed or
    /// vanished since they were recorded.
    pub fn stale_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(path, digest)| sha256_file(Path::new(path)).ok().as_ref() != Some(*digest))
            .map(|(path, _)| path.clone())
            .collect()
    }
}

/// Logs a warning for every input of `dir`'s manifest that has changed.
pub fn warn_if_stale(dir: &Path) {
    if let Ok(m) = RunManifest::load_or_default(dir) {
        for p in m.stale_inputs() {
            log::warn!("{} was built from {p}, which has changed since", dir.display());
        }
    }
}

/// Merges this command's record into `dir/manifest.json`.
pub fn record(
    dir: &Path,
    command: &str,
    cfg: &Config,
    inputs: &[PathBuf],
    artifacts: &[(&str, PathBuf)],
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut m = RunManifest::load_or_default(dir)?;
    m.tool_version = env!("CARGO_PKG_VERSION").to_string();
    m.config = serde_json::to_value(cfg)?;
    m.seeds = std::iter::once(("root".to_string(), cfg.seed))
        .chain(STAGE_LABELS.iter().map(|l| (l.to_string(), seeds::derive(cfg.seed, l))))
        .collect();
    for p in inputs {
        m.input(p)?;
    }
    for (name, p) in artifacts {
        if !p.exists() {
            bail!("artifact {name} was not written: {}", p.display());
        }
        m.artifact(name, p);
    }
    m.commands.push(command.to_string());
    let path = dir.join(FILE_NAME);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(path)
}
