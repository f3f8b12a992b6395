//! Run manifests: every command records its parameters and input
//! fingerprints next to its outputs, so any artifact can be reproduced
//! byte-for-byte from the manifest alone.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::file_fingerprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<InputFingerprint>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: "sgtransfer".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    pub fn parameter<V: Serialize>(mut self, key: &str, value: V) -> Self {
        self.parameters.insert(
            key.to_string(),
            serde_json::to_value(value).expect("parameter serialization cannot fail"),
        );
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(InputFingerprint {
            path: path.display().to_string(),
            sha256: file_fingerprint(path)?,
        });
        Ok(self)
    }

    /// Write the manifest next to an output artifact as `<output>.manifest.json`.
    pub fn write_sidecar(&self, output: &Path) -> Result<()> {
        let path = sidecar_path(output);
        let body = serde_json::to_string_pretty(self).expect("manifest serialization cannot fail");
        std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn sidecar_path(output: &Path) -> std::path::PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    name.push_str(".manifest.json");
    output.with_file_name(name)
}
