//! Run manifest: one JSON record per command invocation tying together the
//! exact inputs (config hash, seed), the code version, timing, and how the
//! run ended. Wall-clock fields vary between reruns by nature; every other
//! field is deterministic for identical inputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_to_string, write_bytes, IoError};

/// File name every command writes its manifest under, inside the output
/// directory.
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFailure {
    /// Macro step at which the run stopped; 0 for failures before stepping.
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// The invocation, argv-style.
    pub command: Vec<String>,
    /// SHA-256 over the effective inputs; identical configs hash identically.
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub wall_clock_seconds: f64,
    /// Seconds spent per stage, keyed by stage name.
    pub timings: BTreeMap<String, f64>,
    /// Column order of the emitted series CSV; empty for commands without
    /// one.
    #[serde(default)]
    pub csv_columns: Vec<String>,
    /// Present when the run stopped early.
    #[serde(default)]
    pub failure: Option<RunFailure>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::structure(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_bytes(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::from_json(&read_to_string(path)?, path)
    }
}

/// Lowercase hex SHA-256, the hash used for `config_hash` and for comparing
/// emitted artifacts.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        write!(out, "{byte:02x}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunManifest {
        RunManifest {
            command: vec!["midelbm".into(), "sim".into(), "--config".into(), "a.json".into()],
            config_hash: sha256_hex(b"{}"),
            seed: 7,
            code_version: "0.1.0".into(),
            wall_clock_seconds: 12.5,
            timings: BTreeMap::from([("fluid".into(), 10.0), ("io".into(), 0.5)]),
            csv_columns: super::super::PARTICLE_COLUMNS
                .iter()
                .map(|c| c.to_string())
                .collect(),
            failure: None,
        }
    }

    #[test]
    fn manifests_round_trip_through_json() {
        let manifest = sample();
        let back =
            RunManifest::from_json(&manifest.to_json(), Path::new("manifest.json")).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn failures_survive_the_round_trip() {
        let mut manifest = sample();
        manifest.failure = Some(RunFailure {
            step: 41,
            message: "macro step 41: fluid update failed".into(),
        });
        let back =
            RunManifest::from_json(&manifest.to_json(), Path::new("manifest.json")).unwrap();
        assert_eq!(back.failure.unwrap().step, 41);
    }

    #[test]
    fn the_hash_is_stable_and_input_sensitive() {
        assert_eq!(sha256_hex(b"abc"), sha256_hex(b"abc"));
        assert_ne!(sha256_hex(b"abc"), sha256_hex(b"abd"));
        // Fixed reference value so accidental algorithm swaps get caught.
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
