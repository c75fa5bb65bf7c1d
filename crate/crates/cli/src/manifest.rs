//! Per-stage manifests: content hashes of what a stage read and wrote.
//!
//! A stage's outputs are stale when the inputs it recorded no longer hash
//! to the same values, or when its outputs were changed after it ran.
//! Hashes rather than modification times keep the check independent of
//! clocks and copies.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    /// Input key to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path, relative to the output directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of a JSON value; map keys are sorted, so equal values hash equally.
pub fn sha256_json<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("configuration serializes");
    sha256_hex(&serde_json::to_vec(&v).expect("value serializes"))
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Option<Self>> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| CliError::Failed(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::Failed(format!("{}: {e}", path.display()))),
        }
    }

    /// Differences between recorded and current hashes, as readable lines.
    pub fn changed(recorded: &BTreeMap<String, String>, current: &BTreeMap<String, String>) -> Vec<String> {
        let mut out = Vec::new();
        for (key, hash) in recorded {
            match current.get(key) {
                None => out.push(format!("{key} is no longer an input")),
                Some(h) if h != hash => out.push(format!("{key} changed")),
                _ => {}
            }
        }
        for key in current.keys().filter(|k| !recorded.contains_key(*k)) {
            out.push(format!("{key} is a new input"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn json_hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":[2,3]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":[2,3],"a":1}"#).unwrap();
        assert_eq!(sha256_json(&a), sha256_json(&b));
    }

    #[test]
    fn reports_changes() {
        let rec: BTreeMap<String, String> = [("x".into(), "1".into()), ("y".into(), "2".into())].into();
        let cur: BTreeMap<String, String> = [("x".into(), "1".into()), ("y".into(), "3".into()), ("z".into(), "4".into())].into();
        assert_eq!(Manifest::changed(&rec, &cur), vec!["y changed".to_string(), "z is a new input".to_string()]);
        assert!(Manifest::changed(&rec, &rec).is_empty());
    }
}
