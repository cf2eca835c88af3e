//! Per-stage reproducibility manifest and the run-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";
const LOCK_NAME: &str = ".patchspn.lock";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Regular files under `path` (or `path` itself), sorted.
fn files_under(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != MANIFEST_NAME && n != LOCK_NAME) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_text: &str) -> Self {
        Self { command: command.into(), seed, config_sha256: sha256_text(config_text), inputs: Vec::new(), artifacts: Vec::new() }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        for f in files_under(path)? {
            self.inputs.push(FileDigest { path: f.display().to_string(), sha256: sha256_file(&f)? });
        }
        Ok(())
    }

    /// Records every file in `stage_dir` (relative paths) and writes the
    /// manifest plus the resolved configuration next to them.
    pub fn finish(mut self, stage_dir: &Path, config_text: &str) -> Result<(), CliError> {
        fs::write(stage_dir.join("config.toml"), config_text)?;
        for f in files_under(stage_dir)? {
            let rel = f.strip_prefix(stage_dir).unwrap_or(&f);
            self.artifacts.push(FileDigest { path: rel.display().to_string(), sha256: sha256_file(&f)? });
        }
        let text = toml::to_string(&self).map_err(|e| CliError::Data(e.to_string()))?;
        fs::write(stage_dir.join(MANIFEST_NAME), text)?;
        Ok(())
    }
}

/// Exclusive lock on an output root, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out)?;
        let path = out.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Data(format!("{} is locked by another run (remove {} if stale)", out.display(), path.display())))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest_and_lock_exclusion() {
        assert_eq!(sha256_text("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
