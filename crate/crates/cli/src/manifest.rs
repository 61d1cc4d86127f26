//! Run manifests, written next to every output as `<output>.manifest.json`.

use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{exit, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every resolved parameter, defaults included.
    pub parameters: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn digest_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new(exit::FILE, format!("{}: {e}", path.display())))?;
    Ok(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects inputs during a command and writes the manifest at the end.
#[derive(Debug)]
pub struct ManifestBuilder {
    command: String,
    parameters: serde_json::Value,
    inputs: Vec<InputDigest>,
    seed: Option<u64>,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn new(command: &str, parameters: impl Serialize) -> Self {
        Self {
            command: command.into(),
            parameters: serde_json::to_value(parameters).unwrap_or(serde_json::Value::Null),
            inputs: Vec::new(),
            seed: None,
            started: Utc::now(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let d = digest_file(path)?;
        if !self.inputs.contains(&d) {
            self.inputs.push(d);
        }
        Ok(())
    }

    pub fn finish(&self, outputs: &[&Path]) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            parameters: self.parameters.clone(),
            inputs: self.inputs.clone(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: timestamp(self.started),
            finished_at: timestamp(Utc::now()),
        }
    }

    /// Writes one manifest beside each output.
    pub fn write(&self, outputs: &[&Path]) -> CliResult<()> {
        let manifest = self.finish(outputs);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        for out in outputs {
            let path = manifest_path(out);
            std::fs::write(&path, &text).map_err(|e| CliError::new(exit::FILE, format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}
