//! Run manifests: enough to replay a command, written before it does any work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<String>,
    /// Fully resolved config: key=value text, or the synthetic spec as JSON.
    pub config: String,
    pub seed: u64,
    pub out_dir: String,
    pub inputs: BTreeMap<String, Artifact>,
    #[serde(default)]
    pub outputs: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: String, seed: u64, out_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            config,
            seed,
            out_dir: out_dir.display().to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(name.to_string(), Artifact { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Records a file already written under the output directory.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.outputs.insert(name, Artifact { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn path(&self) -> PathBuf {
        Path::new(&self.out_dir).join(MANIFEST_FILE)
    }

    pub fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(self.path(), text).with_context(|| format!("writing {}", self.path().display()))
    }

    /// `Some` when `text` is a manifest rather than a plain config file.
    pub fn parse(text: &str) -> Option<Self> {
        let value: serde_json::Value = serde_json::from_str(text).ok()?;
        if value.get("command").is_none() {
            return None;
        }
        serde_json::from_value(value).ok()
    }
}
