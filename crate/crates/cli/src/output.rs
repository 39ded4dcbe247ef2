//! Run directories: staged writes, manifest, atomic publish.

use std::fs;
use std::path::{Path, PathBuf};

use repmarket::table::Table;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Subcommand arguments that reproduce the run together with the stored
    /// configuration file.
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<InputEntry>,
    /// Every other file in the directory, sorted by name.
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|_| CliError::Core(repmarket::Error::MissingArtifact(path.clone())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed manifest {}: {e}", path.display())))
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// A run directory being written. Files go to a hidden sibling first and
/// the directory appears under its final name only once complete.
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(target: &Path, force: bool) -> Result<Self, CliError> {
        if target.join(MANIFEST).exists() && !force {
            return Err(CliError::Usage(format!(
                "{} already holds a run manifest; pass --force to replace it",
                target.display()
            )));
        }
        if target.exists() && !target.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", target.display())));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let name = target.file_name().ok_or_else(|| CliError::Usage(format!("bad output path {}", target.display())))?;
        let staging = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(RunDir { target: target.to_path_buf(), staging, files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.target
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.staging.join(name), bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let text = table.to_string_tsv()?;
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes the manifest and moves the directory into place.
    pub fn finish(self, command: &str, args: Vec<String>, seed: u64, inputs: Vec<InputEntry>) -> Result<PathBuf, CliError> {
        let mut names = self.files.clone();
        names.sort();
        let mut files = Vec::with_capacity(names.len());
        for n in names {
            let bytes = fs::read(self.staging.join(&n))?;
            files.push(FileEntry { name: n, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        }
        let manifest = Manifest {
            tool: "repmarket".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            seed,
            inputs,
            files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))? + "\n";
        fs::write(self.staging.join(MANIFEST), text)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        Ok(self.target.clone())
    }

    /// Removes the staging directory without publishing.
    pub fn discard(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}
