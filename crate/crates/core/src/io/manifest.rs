//! Run manifests: command, effective config and sha256 of every input and output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::IoError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Paths are recorded relative to this directory when inside it.
    #[serde(skip)]
    root: PathBuf,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::at(path, e))?;
    Ok(sha256_bytes(&bytes))
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize, root: &Path) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            root: root.to_path_buf(),
        }
    }

    fn entry(&self, path: &Path) -> Result<FileHash, IoError> {
        let shown = path.strip_prefix(&self.root).unwrap_or(path);
        Ok(FileHash {
            path: shown.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path)?,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), IoError> {
        let e = self.entry(path)?;
        self.inputs.push(e);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), IoError> {
        let e = self.entry(path)?;
        self.outputs.push(e);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_json(path, self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::at(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn paths_relative_to_root() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, "x").unwrap();
        let mut m = Manifest::new("test", &serde_json::json!({"k": 1}), dir.path());
        m.output(&f).unwrap();
        assert_eq!(m.outputs[0].path, "a.txt");
    }
}
