//! Content-hash manifest of every artifact written under an output directory.
//!
//! Each entry records the command that produced the file and the hashes of
//! the inputs it consumed, so a stale or missing upstream artifact can be
//! named precisely.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub sha256: String,
    pub command: String,
    /// Input path (relative to the output directory when inside it) to hash.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Lexical normalization; no symlink resolution.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Output directory plus its manifest; one writer per directory.
#[derive(Debug)]
pub struct Workspace {
    pub root: PathBuf,
    manifest: Manifest,
    command: String,
    inputs: BTreeMap<String, String>,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>, command: &str) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        let path = root.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Dependency(format!("corrupt manifest {}: {e}", path.display())))?
        } else {
            Manifest::default()
        };
        Ok(Workspace {
            root,
            manifest,
            command: command.to_string(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Absolute-or-cwd path of `p`, interpreting relative paths against the root.
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Manifest key of a path inside the output directory.
    fn key(&self, path: &Path) -> Option<String> {
        let root = normalize(&self.root);
        normalize(path)
            .strip_prefix(&root)
            .ok()
            .map(|rel| rel.to_string_lossy().replace('\\', "/"))
    }

    /// Checks an input against the manifest and remembers its hash.
    ///
    /// Files inside the output directory must have been recorded by an
    /// earlier command with the same content. Files elsewhere are external
    /// inputs and are only hashed.
    pub fn require(&mut self, p: &str) -> Result<PathBuf> {
        let path = self.resolve(p);
        let key = self.key(&path);
        let recorded = key.as_ref().and_then(|k| self.manifest.artifacts.get(k));
        if !path.is_file() {
            return Err(CliError::Dependency(match recorded {
                Some(a) => format!("missing artifact {p} (manifest sha256 {})", a.sha256),
                None => format!("missing artifact {p}"),
            }));
        }
        let actual = sha256_file(&path)?;
        match (&key, recorded) {
            (Some(k), None) => {
                return Err(CliError::Dependency(format!(
                    "artifact {k} (sha256 {actual}) is not recorded in {MANIFEST_FILE}"
                )))
            }
            (Some(k), Some(a)) if a.sha256 != actual => {
                return Err(CliError::Dependency(format!(
                    "stale artifact {k}: manifest sha256 {}, file sha256 {actual}",
                    a.sha256
                )))
            }
            _ => {}
        }
        let name = key.unwrap_or_else(|| path.to_string_lossy().into_owned());
        self.inputs.insert(name, actual);
        Ok(path)
    }

    /// Writes `bytes` to `rel` under the root and records it.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(rel)?;
        Ok(path)
    }

    /// Records a file that a library writer already placed at `rel`.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let sha256 = sha256_file(&path)?;
        let key = self.key(&path).expect("written under the root");
        self.manifest.artifacts.insert(
            key,
            Artifact {
                sha256,
                command: self.command.clone(),
                inputs: self.inputs.clone(),
            },
        );
        Ok(())
    }

    /// Parent directory of `rel` under the root, created on demand.
    pub fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(path)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
