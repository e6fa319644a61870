//! Run manifests: which files a pipeline produced, with content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run.manifest.json";

/// JSON keys treated as timestamps and ignored by content hashes.
const TIMESTAMP_KEYS: [&str; 1] = ["created"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    /// Relative to the manifest's directory when the file lives below it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub created: String,
    /// Seed of the most recent step.
    pub seed: Option<u64>,
    /// Hash over the config hashes of all steps, in order.
    pub config_hash: String,
    pub steps: Vec<Step>,
    pub artifacts: Vec<Artifact>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            created: String::new(),
            seed: None,
            config_hash: String::new(),
            steps: Vec::new(),
            artifacts: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn strip_timestamps(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in TIMESTAMP_KEYS {
                map.remove(k);
            }
            map.values_mut().for_each(strip_timestamps);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

/// SHA-256 of a file; JSON documents are hashed after removing timestamp keys.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_slice::<Value>(&bytes) {
        Ok(mut v) => {
            strip_timestamps(&mut v);
            Ok(sha256_hex(&serde_json::to_vec(&v)?))
        }
        Err(_) => Ok(sha256_hex(&bytes)),
    }
}

/// Hash of a command's effective configuration.
pub fn config_hash(config: &Value) -> String {
    let mut v = config.clone();
    strip_timestamps(&mut v);
    sha256_hex(&serde_json::to_vec(&v).expect("JSON values serialize"))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    fn base_dir(manifest: &Path) -> PathBuf {
        manifest.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Absolute (or cwd-relative) location of an artifact.
    pub fn resolve(manifest: &Path, artifact: &Artifact) -> PathBuf {
        let p = Path::new(&artifact.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            Self::base_dir(manifest).join(p)
        }
    }

    /// Appends a step and (re)hashes its artifacts into the manifest at `manifest`.
    pub fn record(manifest: &Path, step: Step, artifacts: &[(&str, &Path)]) -> Result<Self> {
        let mut m = Self::load_or_default(manifest)?;
        let base = Self::base_dir(manifest);
        let base_abs = fs::canonicalize(if base.as_os_str().is_empty() { Path::new(".") } else { &base })?;
        for (kind, path) in artifacts {
            let abs = fs::canonicalize(path).with_context(|| format!("artifact {}", path.display()))?;
            let rel = abs.strip_prefix(&base_abs).map(Path::to_path_buf).unwrap_or_else(|_| abs.clone());
            let entry = Artifact { kind: kind.to_string(), path: rel.to_string_lossy().into_owned(), sha256: content_hash(&abs)? };
            match m.artifacts.iter_mut().find(|a| a.path == entry.path) {
                Some(a) => *a = entry,
                None => m.artifacts.push(entry),
            }
        }
        m.seed = step.seed;
        m.steps.push(step);
        let joined: Vec<&str> = m.steps.iter().map(|s| s.config_hash.as_str()).collect();
        m.config_hash = sha256_hex(joined.join(",").as_bytes());
        m.tool_version = env!("CARGO_PKG_VERSION").into();
        m.created = now();
        if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(manifest, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing manifest {}", manifest.display()))?;
        Ok(m)
    }

    /// Artifacts of `kind`, verified against their recorded hashes.
    pub fn verified(&self, manifest: &Path, kind: &str) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for a in self.artifacts.iter().filter(|a| a.kind == kind) {
            let p = Self::resolve(manifest, a);
            let h = content_hash(&p)?;
            if h != a.sha256 {
                bail!("{} changed since it was recorded (sha256 {h}, manifest {})", p.display(), a.sha256);
            }
            out.push(p);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_do_not_affect_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        fs::write(&a, r#"{"metadata": {"created": "2024-01-01T00:00:00Z", "x": 1}}"#).unwrap();
        fs::write(&b, r#"{"metadata": {"created": "2025-06-01T00:00:00Z", "x": 1}}"#).unwrap();
        assert_eq!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
        fs::write(&b, r#"{"metadata": {"created": "2025-06-01T00:00:00Z", "x": 2}}"#).unwrap();
        assert_ne!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
    }

    #[test]
    fn record_replaces_same_path_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join(MANIFEST_NAME);
        let f = dir.path().join("h.csv");
        fs::write(&f, "round\n0\n").unwrap();
        let step = Step { command: "x".into(), seed: Some(1), config_hash: "c".into() };
        RunManifest::record(&m, step.clone(), &[("history", &f)]).unwrap();
        let man = RunManifest::record(&m, step, &[("history", &f)]).unwrap();
        assert_eq!(man.artifacts.len(), 1);
        assert_eq!(man.artifacts[0].path, "h.csv");
        assert_eq!(man.steps.len(), 2);
        assert_eq!(man.verified(&m, "history").unwrap().len(), 1);
        fs::write(&f, "round\n1\n").unwrap();
        assert!(man.verified(&m, "history").is_err());
    }
}
