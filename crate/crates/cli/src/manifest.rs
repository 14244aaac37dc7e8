//! The pipeline manifest and content hashing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageEntry {
    pub hash: String,
    /// Hash of the stage this one was computed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream: Option<String>,
    /// Paths relative to the artifact root.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub stages: BTreeMap<String, StageEntry>,
    /// Canonical configuration of the most recent run.
    pub config: BTreeMap<String, String>,
}

impl PipelineManifest {
    pub fn load(root: &Path) -> Result<Self, Failure> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, root: &Path) -> Result<(), Failure> {
        std::fs::create_dir_all(root).map_err(|e| Failure::input(format!("{}: {e}", root.display())))?;
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    /// The entry for `stage` if its hash is `hash` and all its artifacts exist.
    pub fn fresh(&self, root: &Path, stage: &str, hash: &str) -> Option<&StageEntry> {
        self.stages
            .get(stage)
            .filter(|e| e.hash == hash && e.artifacts.iter().all(|a| root.join(a).exists()))
    }

    /// The upstream entry, or exit 3 when it is missing or was built from
    /// different inputs.
    pub fn require(&self, root: &Path, stage: &str, hash: &str, command: &str) -> Result<&StageEntry, Failure> {
        match self.stages.get(stage) {
            None => Err(Failure::stale(format!(
                "stage `{stage}` has not been run; run `gctm {command}` first"
            ))),
            Some(_) => self.fresh(root, stage, hash).ok_or_else(|| {
                Failure::stale(format!(
                    "stage `{stage}` is stale for the current configuration; rerun `gctm {command}`"
                ))
            }),
        }
    }
}

/// SHA-256 over length-prefixed parts.
pub fn hash_parts<S: AsRef<[u8]>>(parts: &[S]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        let p = p.as_ref();
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn hash_file(path: &Path) -> Result<String, Failure> {
    let mut file = File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}
