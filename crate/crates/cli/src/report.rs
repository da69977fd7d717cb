//! Machine-readable run reports.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Bumped whenever a report field is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

/// JSON schema every report validates against.
pub const SCHEMA: &str = include_str!("../schema/run_report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

/// Flat summary of one command. Paths are recorded as given on the command
/// line, or relative to the output directory for `pipeline`, so reports do
/// not depend on where a run happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub flags: BTreeMap<String, bool>,
    /// SHA-256 of every file read or written, keyed like `inputs`/`outputs`.
    pub hashes: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    pub outputs: BTreeMap<String, String>,
    pub schema_version: u32,
    pub status: Status,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            error: None,
            flags: BTreeMap::new(),
            hashes: BTreeMap::new(),
            inputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
            outputs: BTreeMap::new(),
            schema_version: SCHEMA_VERSION,
            status: Status::Ok,
        }
    }

    pub fn failed(command: &str, err: &CliError) -> Self {
        Self {
            error: Some(err.to_string()),
            status: Status::Error,
            ..Self::new(command)
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.inputs.insert(key.to_string(), value.to_string());
        self
    }

    /// Records an input file and its hash.
    pub fn input_file(&mut self, key: &str, path: &Path) -> Result<&mut Self, CliError> {
        let hash = sha256_file(path)?;
        self.hashes.insert(key.to_string(), hash);
        Ok(self.input(key, path.display()))
    }

    /// Records an output file under `label` and its hash.
    pub fn output_file(
        &mut self,
        key: &str,
        path: &Path,
        label: &str,
    ) -> Result<&mut Self, CliError> {
        let hash = sha256_file(path)?;
        self.hashes.insert(key.to_string(), hash);
        self.outputs.insert(key.to_string(), label.to_string());
        Ok(self)
    }

    /// Non-finite values cannot be represented in JSON and are stored as
    /// absent.
    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        if value.is_finite() {
            self.metrics.insert(key.to_string(), value);
        }
        self
    }

    pub fn flag(&mut self, key: &str, value: bool) -> &mut Self {
        self.flags.insert(key.to_string(), value);
        self
    }

    /// Sorted keys, no insignificant whitespace.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("report serializes")
            .to_string()
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_sorts_keys() {
        let mut r = RunReport::new("eval");
        r.metric("top1", 0.5)
            .metric("a", 1.0)
            .input("task", "moons");
        let j = r.to_canonical_json();
        assert!(j.starts_with("{\"command\":\"eval\",\"flags\":{},\"hashes\":{}"));
        assert!(j.contains("\"metrics\":{\"a\":1.0,\"top1\":0.5}"));
        assert!(!j.contains(' '));
        assert_eq!(RunReport::from_json(&j).unwrap(), r);
    }

    #[test]
    fn non_finite_metrics_are_dropped() {
        let mut r = RunReport::new("x");
        r.metric("nan", f64::NAN).metric("inf", f64::INFINITY);
        assert!(r.metrics.is_empty());
    }

    #[test]
    fn schema_is_valid_json() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        assert_eq!(v["properties"]["schema_version"]["const"], SCHEMA_VERSION);
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
