//! Output directory handling. Every file is written through a temp file and
//! renamed into place, and `manifest.json` records its checksum together
//! with the hash of the configuration that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{file} not found in {dir}; run `lifecycle {command}` first")]
    Missing {
        file: String,
        dir: PathBuf,
        command: &'static str,
    },
    #[error("{file}: checksum mismatch (expected {expected}, found {found}); the file was modified after it was written")]
    Checksum {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file} was produced from config {found}, current config is {expected}; rerun `lifecycle {command}`")]
    ConfigMismatch {
        file: String,
        expected: String,
        found: String,
        command: &'static str,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: {reason}")]
    Format { file: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub sha256: String,
    pub config_hash: String,
    pub command: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, Entry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Writes `bytes` to `path` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let io = |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

/// An output directory bound to one configuration hash.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
    pub config_hash: String,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>, config_hash: impl Into<String>) -> Self {
        OutDir {
            root: root.into(),
            config_hash: config_hash.into(),
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn manifest(&self) -> Result<Manifest, ArtifactError> {
        let path = self.path(MANIFEST);
        match fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| ArtifactError::Format {
                file: MANIFEST.into(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(source) => Err(ArtifactError::Io { path, source }),
        }
    }

    /// Writes one artifact and records it in the manifest.
    pub fn write(&self, file: &str, bytes: &[u8], command: &str) -> Result<(), ArtifactError> {
        write_atomic(&self.path(file), bytes)?;
        let mut m = self.manifest()?;
        m.files.insert(
            file.into(),
            Entry {
                sha256: sha256_hex(bytes),
                config_hash: self.config_hash.clone(),
                command: command.into(),
            },
        );
        let mut json = serde_json::to_vec_pretty(&m).expect("manifest serialises");
        json.push(b'\n');
        write_atomic(&self.path(MANIFEST), &json)
    }

    /// Reads an artifact produced by `command`, checking presence, checksum
    /// and the configuration hash.
    pub fn read(&self, file: &str, command: &'static str) -> Result<Vec<u8>, ArtifactError> {
        let path = self.path(file);
        let missing = || ArtifactError::Missing {
            file: file.into(),
            dir: self.root.clone(),
            command,
        };
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing()),
            Err(source) => return Err(ArtifactError::Io { path, source }),
        };
        let m = self.manifest()?;
        let entry = m.files.get(file).ok_or_else(missing)?;
        let found = sha256_hex(&bytes);
        if found != entry.sha256 {
            return Err(ArtifactError::Checksum {
                file: file.into(),
                expected: entry.sha256.clone(),
                found,
            });
        }
        if entry.config_hash != self.config_hash {
            return Err(ArtifactError::ConfigMismatch {
                file: file.into(),
                expected: self.config_hash.clone(),
                found: entry.config_hash.clone(),
                command,
            });
        }
        Ok(bytes)
    }
}

/// Serialises rows to CSV with a header.
pub fn csv_bytes<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("csv row serialises");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("json serialises");
    v.push(b'\n');
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path(), "abc");
        out.write("a.csv", b"x\n1\n", "solve").unwrap();
        assert_eq!(out.read("a.csv", "solve").unwrap(), b"x\n1\n");

        let other = OutDir::new(dir.path(), "def");
        assert!(matches!(
            other.read("a.csv", "solve"),
            Err(ArtifactError::ConfigMismatch { .. })
        ));
        assert!(matches!(
            out.read("b.csv", "simulate"),
            Err(ArtifactError::Missing { .. })
        ));

        fs::write(dir.path().join("a.csv"), b"x\n2\n").unwrap();
        assert!(matches!(
            out.read("a.csv", "solve"),
            Err(ArtifactError::Checksum { .. })
        ));
    }
}
