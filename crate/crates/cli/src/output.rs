//! Output directories with a resolved config and a content manifest.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::{CliError, ExperimentConfig};

pub const MANIFEST: &str = "manifest.sha256";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Collects the files a command writes. Files whose content depends on
/// wall-clock timing are marked volatile and listed without a hash, so the
/// manifest itself stays reproducible.
pub struct OutDir {
    root: PathBuf,
    files: Vec<(String, Option<String>)>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn put(&mut self, name: &str, bytes: &[u8], volatile: bool) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let hash = (!volatile).then(|| hex::encode(Sha256::digest(bytes)));
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), hash));
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.put(name, bytes, false)
    }

    pub fn write_volatile(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.put(name, bytes, true)
    }

    /// Writes the resolved config and the manifest (`<sha256>  <name>`, or
    /// `volatile  <name>`), sorted by file name.
    pub fn finish(mut self, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
        self.write(RESOLVED_CONFIG, cfg.to_toml().as_bytes())?;
        self.files.sort();
        let mut text = String::new();
        for (name, hash) in &self.files {
            text.push_str(hash.as_deref().unwrap_or("volatile"));
            text.push_str("  ");
            text.push_str(name);
            text.push('\n');
        }
        let path = self.path(MANIFEST);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(self.root)
    }
}

/// Parses a manifest into `(name, hash)` pairs; volatile files have no hash.
pub fn read_manifest(dir: &Path) -> Result<Vec<(String, Option<String>)>, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    text.lines()
        .map(|l| {
            let (hash, name) = l
                .split_once("  ")
                .ok_or_else(|| CliError::Io(format!("malformed manifest line {l:?}")))?;
            Ok((
                name.to_string(),
                (hash != "volatile").then(|| hash.to_string()),
            ))
        })
        .collect()
}
