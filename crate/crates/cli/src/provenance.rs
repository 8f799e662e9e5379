use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where an artifact came from: enough to regenerate it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub seeds: Vec<(String, u64)>,
    pub deterministic: bool,
    pub inputs: Vec<InputHash>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    /// SHA-256 over `blob <len>\0<content>`, the git object framing.
    pub sha256: String,
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

impl Provenance {
    pub fn new(deterministic: bool) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line: std::env::args().collect(),
            seeds: Vec::new(),
            deterministic,
            inputs: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.push((name.to_string(), value));
        self
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: content_hash(bytes),
        });
    }
}
