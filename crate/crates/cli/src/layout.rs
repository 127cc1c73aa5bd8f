//! Where each command reads and writes under the workdir.

use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub struct Layout {
    workdir: PathBuf,
    checkpoints: PathBuf,
}

impl Layout {
    pub fn new(config: &ExperimentConfig) -> Self {
        Layout { workdir: config.paths.workdir.clone(), checkpoints: config.checkpoint_dir() }
    }

    pub fn prepared(&self, dataset: &str) -> PathBuf {
        self.workdir.join("prepared").join(format!("{dataset}.json"))
    }

    pub fn profile(&self, dataset: &str) -> PathBuf {
        self.workdir.join("profiles").join(format!("{dataset}.importance.json"))
    }

    pub fn checkpoint(&self, stem: &str) -> PathBuf {
        self.checkpoints.join(format!("{stem}.lrkt"))
    }

    pub fn report_stem(&self, stem: &str) -> PathBuf {
        self.workdir.join("reports").join(stem)
    }
}

/// Ground-truth sidecar written next to a synthetic dataset file.
pub fn truth_path(dataset_file: &Path) -> PathBuf {
    dataset_file.with_extension("truth.json")
}

/// Writes `bytes` to `path`, creating parent directories, and returns the
/// hex SHA-256 of the content.
pub fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<String> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(hex_digest(bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
