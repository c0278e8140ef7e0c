//! Shared plumbing for the CLI commands: atomic file writes, input hashing,
//! manifest-path conventions and the on-disk wrapper documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use osr_core::dataset::{load_dataset, read_manifest, ActivationDataset, Manifest, Split};
use osr_core::toy::ToyClassifier;
use osr_core::{OsrError, Result};

pub const DOC_FORMAT: u32 = 1;

/// Sidecar manifest convention: `features.csv` -> `features.manifest.json`.
pub fn default_manifest_path(data: &Path) -> PathBuf {
    data.with_extension("manifest.json")
}

/// Write-temp-then-rename so re-runs replace outputs atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `{"path": ..., "sha256": ...}` provenance entry for one input file.
pub fn input_stamp(path: &Path) -> Result<serde_json::Value> {
    Ok(json!({
        "path": path.display().to_string(),
        "sha256": sha256_hex(path)?,
    }))
}

pub fn tool_stamp() -> serde_json::Value {
    json!({
        "tool": "osr",
        "version": env!("CARGO_PKG_VERSION"),
    })
}

/// Load a dataset together with its manifest (explicit path or convention).
pub fn load_data(
    data: &Path,
    manifest_path: Option<&Path>,
) -> Result<(ActivationDataset, Manifest, PathBuf)> {
    let manifest_path = manifest_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_manifest_path(data));
    let manifest = read_manifest(&manifest_path)?;
    let ds = load_dataset(data, &manifest)?;
    Ok((ds, manifest, manifest_path))
}

/// Resolve the known-class list: an explicit `--known` flag wins, then the
/// manifest's `known_classes`, then (when permitted) every class.
pub fn resolve_known(
    flag: Option<&str>,
    manifest: &Manifest,
    allow_all: bool,
) -> Result<Vec<String>> {
    if let Some(flag) = flag {
        return Ok(flag.split(',').map(|s| s.trim().to_string()).collect());
    }
    if let Some(known) = &manifest.known_classes {
        return Ok(known.clone());
    }
    if allow_all {
        return Ok(manifest.class_names.clone());
    }
    Err(OsrError::InvalidConfig(
        "no known classes: pass --known or add known_classes to the manifest".into(),
    ))
}

pub fn parse_split(s: &str) -> Result<Split> {
    Split::parse(s)
        .ok_or_else(|| OsrError::InvalidConfig(format!("invalid split {s:?} (train|val|test)")))
}

/// `lo:hi` range flag.
pub fn parse_range(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(OsrError::InvalidConfig(format!(
            "range {s:?} must look like lo:hi"
        )));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| OsrError::InvalidConfig(format!("unparseable range bound {:?}", parts[0])))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| OsrError::InvalidConfig(format!("unparseable range bound {:?}", parts[1])))?;
    Ok((lo, hi))
}

/// `t,v,s` ratio flag.
pub fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(OsrError::InvalidConfig(format!(
            "ratios {s:?} must look like train,val,test"
        )));
    }
    let mut values = [0.0f64; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| OsrError::InvalidConfig(format!("unparseable ratio {part:?}")))?;
    }
    Ok((values[0], values[1], values[2]))
}

/// Serialized form of a trained toy classifier plus the label mapping the
/// `predict` command needs.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifierDoc {
    pub format: u32,
    /// Classes the classifier scores, in logit-slot order.
    pub known_classes: Vec<String>,
    pub feature_dim: usize,
    pub classifier: ToyClassifier,
}

impl ClassifierDoc {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: ClassifierDoc = serde_json::from_str(&text)?;
        if doc.format != DOC_FORMAT {
            return Err(OsrError::UnsupportedFormat {
                found: doc.format,
                expected: DOC_FORMAT,
            });
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_atomic(path, text.as_bytes())
    }
}

/// Swap a path's final extension: `out.json` -> `out.<suffix>`.
pub fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}
