//! Run manifests: the resolved config, the seed and a hash of every input file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{resolve_key, Config};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
    /// Config key → input file.
    pub files: BTreeMap<String, FileHash>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut file = File::open(path).with_context(|| format!("{}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("{}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn config_hash(cfg: &Config) -> String {
    let canonical = serde_json::to_string(&cfg.to_json()).expect("config serializes");
    hex(&Sha256::digest(canonical.as_bytes()))
}

const INPUT_KEYS: &[&str] = &["data.src", "data.tgt", "data.corpus", "data.dictionary", "mapping.checkpoint"];

impl Manifest {
    pub fn new(command: &str, cfg: &Config) -> anyhow::Result<Manifest> {
        let mut files = BTreeMap::new();
        for key in INPUT_KEYS {
            if let Some(path) = cfg.opt_path(key) {
                let sha256 = sha256_file(&path)?;
                files.insert(key.to_string(), FileHash { path, sha256 });
            }
        }
        Ok(Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: cfg.u64("seed"),
            config_hash: config_hash(cfg),
            config: cfg.to_json(),
            files,
        })
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Loads a config file. A run manifest is recognized by its `config` and
/// `files` members; its input files must still hash to the recorded values
/// unless their key is overridden.
pub fn load_config(path: &Path, overrides: &[(String, String)]) -> anyhow::Result<Config> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let json: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let is_manifest = json.get("config").is_some() && json.get("files").is_some();
    if !is_manifest {
        return Ok(Config::build(Some(&json), overrides)?);
    }
    let manifest: Manifest = serde_json::from_value(json).with_context(|| format!("parsing manifest {}", path.display()))?;
    let overridden: Vec<&str> = overrides.iter().filter_map(|(k, _)| resolve_key(k).ok()).collect();
    for (key, file) in &manifest.files {
        if overridden.contains(&key.as_str()) {
            continue;
        }
        let actual = sha256_file(&file.path)?;
        if actual != file.sha256 {
            bail!(
                "{key}: {} has changed since the manifest was written (sha256 {actual}, expected {})",
                file.path.display(),
                file.sha256
            );
        }
    }
    Ok(Config::build(Some(&manifest.config), overrides)?)
}
