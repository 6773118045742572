use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

use crate::failure::config_error;

/// One experiment's artifact directory.
pub struct OutputDir {
    path: PathBuf,
    artifacts: Vec<String>,
}

impl OutputDir {
    /// Creates `path`; an existing non-empty directory is replaced only with `force`.
    pub fn prepare(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let occupied = !path.is_dir() || fs::read_dir(path)?.next().is_some();
            if occupied && !force {
                return Err(config_error(format!(
                    "output {} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
            if occupied {
                if path.is_dir() {
                    fs::remove_dir_all(path)
                } else {
                    fs::remove_file(path)
                }
                .with_context(|| format!("clearing {}", path.display()))?;
            }
        }
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(OutputDir {
            path: path.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let file = self.path.join(name);
        fs::write(&file, contents).with_context(|| format!("writing {}", file.display()))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    /// Writes `manifest.json` (keys sorted, two-space indent, trailing newline).
    pub fn write_manifest(&mut self, manifest: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(manifest)? + "\n";
        self.write("manifest.json", &text)
    }
}
