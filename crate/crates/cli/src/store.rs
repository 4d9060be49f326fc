//! Run-directory layout, content hashing and per-unit stamps.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const SUBDIRS: [&str; 6] = ["corpus", "features", "models", "scores", "reports", "provenance"];

/// Written after a unit succeeds. A unit is skipped when its recomputed
/// input hash matches and its outputs still hash to `output_hash`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub unit: String,
    pub input_hash: String,
    pub output_hash: String,
    pub outputs: Vec<String>,
    /// Hash of the configuration that produced the outputs; the config
    /// itself is kept under `provenance/configs/`.
    pub config_hash: String,
    pub params: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn create(&self) -> io::Result<()> {
        for d in SUBDIRS {
            fs::create_dir_all(self.root.join(d))?;
        }
        fs::create_dir_all(self.stamp_dir())?;
        fs::create_dir_all(self.root.join("provenance/configs"))
    }

    fn stamp_dir(&self) -> PathBuf {
        self.root.join("provenance/stamps")
    }

    pub fn stamp_path(&self, unit: &str) -> PathBuf {
        self.stamp_dir().join(format!("{}.json", unit.replace('/', "__")))
    }

    pub fn read_stamp(&self, unit: &str) -> Option<Stamp> {
        let text = fs::read_to_string(self.stamp_path(unit)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write_stamp(&self, stamp: &Stamp) -> io::Result<()> {
        let text = serde_json::to_string_pretty(stamp).map_err(io::Error::other)?;
        fs::write(self.stamp_path(&stamp.unit), text)
    }

    pub fn remove_stamp(&self, unit: &str) -> io::Result<()> {
        match fs::remove_file(self.stamp_path(unit)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    /// Deletes unit outputs before a re-run so stale files cannot survive.
    pub fn clear(&self, outputs: &[String]) -> io::Result<()> {
        for rel in outputs {
            let p = self.root.join(rel);
            if p.is_dir() {
                fs::remove_dir_all(&p)?;
            } else if p.exists() {
                fs::remove_file(&p)?;
            }
        }
        Ok(())
    }

    /// Hash over the relative names and contents of every file under the
    /// given outputs, in sorted order. Missing outputs are an error.
    pub fn hash_outputs(&self, outputs: &[String]) -> io::Result<String> {
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        for rel in outputs {
            let base = self.root.join(rel);
            if !base.exists() {
                return Err(io::Error::new(
                    io::ErrorKind::NotFound,
                    format!("missing output {}", base.display()),
                ));
            }
            for entry in WalkDir::new(&base).sort_by_file_name() {
                let entry = entry.map_err(io::Error::other)?;
                if !entry.file_type().is_file() {
                    continue;
                }
                let name = entry
                    .path()
                    .strip_prefix(&self.root)
                    .map_err(io::Error::other)?
                    .to_string_lossy()
                    .into_owned();
                h.update((name.len() as u64).to_le_bytes());
                h.update(name.as_bytes());
                let mut f = fs::File::open(entry.path())?;
                h.update(f.metadata()?.len().to_le_bytes());
                loop {
                    let n = f.read(&mut buf)?;
                    if n == 0 {
                        break;
                    }
                    h.update(&buf[..n]);
                }
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
