//! Report envelope, input digests and loaders that accept either raw inputs
//! or the report written by an earlier stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use shs_safe_core::cbc::CertificateBundle;
use shs_safe_core::model::{load_network, Network};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Everything a subcommand writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub inputs: Vec<InputDigest>,
    pub status: String,
    pub exit_code: i32,
    pub warnings: Vec<String>,
    pub result: Value,
}

/// Bytes of an input file, remembered with their digest.
#[derive(Default)]
pub struct Inputs {
    pub digests: Vec<InputDigest>,
}

impl Inputs {
    pub fn read(&mut self, role: &str, path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {role} file {}", path.display()))?;
        self.digests.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    pub fn network(&mut self, path: &Path) -> Result<Network> {
        let text = self.read("model", path)?;
        load_network(&text).with_context(|| format!("invalid model {}", path.display()))
    }

    /// One bundle per node: a single bundle is shared by all nodes, an array
    /// must match the node count, and a calibrate or pipeline report supplies
    /// its `certificates`.
    pub fn certificates(&mut self, path: &Path, nodes: usize) -> Result<Vec<CertificateBundle>> {
        let text = self.read("certificate", path)?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
        let value = match value.get("result").and_then(|r| r.get("certificates")) {
            Some(c) => c.clone(),
            None => value,
        };
        let bundles: Vec<CertificateBundle> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|b| vec![b])
        }
        .with_context(|| format!("invalid certificate {}", path.display()))?;
        match bundles.len() {
            1 => Ok(vec![bundles[0].clone(); nodes]),
            n if n == nodes => Ok(bundles),
            n => bail!("{} holds {n} certificates for {nodes} subsystems", path.display()),
        }
    }

    /// A JSON document, or the `result` of a report wrapping it.
    pub fn document(&mut self, role: &str, path: &Path) -> Result<Value> {
        let text = self.read(role, path)?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
        Ok(if value.get("tool").is_some() { value["result"].clone() } else { value })
    }
}

pub fn timestamp() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

pub fn write(report: &Report, out: Option<&PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
