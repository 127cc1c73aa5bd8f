use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lorekt::data::{DatasetSpec, GlobalVocab, SyntheticConfig, MAX_SEQ_LEN};
use lorekt::model::{ModelConfig, Preset};
use lorekt::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Rich,
    Low,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub dataset_index: usize,
    pub path: PathBuf,
    pub role: Role,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

impl DatasetEntry {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec { name: self.name.clone(), dataset_index: self.dataset_index, path: self.path.clone() }
    }
}

/// Either a named preset or all four architecture sizes.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub n_layers: Option<usize>,
    pub d_model: Option<usize>,
    pub n_head: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_seq_len: Option<usize>,
}

impl ModelSection {
    fn sizes(&self) -> Result<(usize, usize, usize, usize), UsageError> {
        let explicit = [self.n_layers, self.d_model, self.n_head, self.d_ff];
        match &self.preset {
            Some(name) => {
                if explicit.iter().any(Option::is_some) {
                    return Err(UsageError("model: give either a preset or explicit sizes, not both".into()));
                }
                let p = Preset::by_name(name).map_err(|e| UsageError(format!("model: {e}")))?;
                Ok((p.n_layers, p.d_model, p.n_head, p.d_ff))
            }
            None => match explicit {
                [Some(a), Some(b), Some(c), Some(d)] => Ok((a, b, c, d)),
                _ => Err(UsageError("model: set a preset or all of n_layers, d_model, n_head, d_ff".into())),
            },
        }
    }

    pub fn build(&self, vocab: &GlobalVocab, dropout: f64) -> Result<ModelConfig, UsageError> {
        let (n_layers, d_model, n_head, d_ff) = self.sizes()?;
        let config = ModelConfig {
            n_layers,
            d_model,
            n_head,
            d_ff,
            dropout,
            max_seq_len: self.max_seq_len.unwrap_or(MAX_SEQ_LEN),
            n_questions: vocab.total_questions(),
            n_kcs: vocab.total_kcs(),
            n_datasets: vocab.dataset_slots(),
        };
        Ok(config)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub workdir: PathBuf,
    /// Defaults to `<workdir>/checkpoints`.
    #[serde(default)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub datasets: Vec<DatasetEntry>,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Reads and checks a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        config.paths.workdir = resolve(&config.paths.workdir);
        config.paths.checkpoints = config.paths.checkpoints.as_deref().map(resolve);
        for d in &mut config.datasets {
            d.path = resolve(&d.path);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if self.datasets.is_empty() {
            return Err(UsageError("datasets: at least one dataset is required".into()));
        }
        let mut names = BTreeSet::new();
        let mut indices = BTreeSet::new();
        for d in &self.datasets {
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                return Err(UsageError(format!("datasets: invalid name {:?}", d.name)));
            }
            if !names.insert(d.name.as_str()) {
                return Err(UsageError(format!("datasets: name {:?} is used twice", d.name)));
            }
            if !indices.insert(d.dataset_index) {
                return Err(UsageError(format!("datasets: dataset_index {} is used twice", d.dataset_index)));
            }
            if let Some(s) = &d.synthetic {
                s.validate().map_err(|e| UsageError(format!("datasets.{}.synthetic: {e}", d.name)))?;
            }
        }
        self.model.sizes()?;
        self.train.validate().map_err(|e| UsageError(format!("train: {e}")))?;
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetEntry, UsageError> {
        self.datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| UsageError(format!("no dataset named {name:?} in the config")))
    }

    pub fn rich(&self) -> Vec<&DatasetEntry> {
        self.datasets.iter().filter(|d| d.role == Role::Rich).collect()
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.paths.checkpoints.clone().unwrap_or_else(|| self.paths.workdir.join("checkpoints"))
    }
}
