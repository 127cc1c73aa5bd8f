use serde::{Deserialize, Serialize};

use crate::data::GlobalVocab;
use crate::error::{Error, Result};

/// Architecture hyperparameters plus the vocabulary sizes the embedding
/// tables are built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    /// Regular question rows (UNK rows excluded).
    pub n_questions: usize,
    pub n_kcs: usize,
    /// Dataset-embedding rows; also the number of reserved UNK rows per table.
    pub n_datasets: usize,
}

/// A named architecture without vocabulary sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub d_ff: usize,
}

pub const PRESETS: [Preset; 6] = [
    Preset { name: "base-89M", n_layers: 4, d_model: 256, n_head: 8, d_ff: 256 },
    Preset { name: "base-221M", n_layers: 24, d_model: 512, n_head: 16, d_ff: 1024 },
    Preset { name: "base-478M", n_layers: 24, d_model: 1024, n_head: 16, d_ff: 1024 },
    Preset { name: "base-1.01B", n_layers: 32, d_model: 1536, n_head: 24, d_ff: 2560 },
    Preset { name: "desk", n_layers: 4, d_model: 64, n_head: 4, d_ff: 128 },
    Preset { name: "tiny", n_layers: 2, d_model: 16, n_head: 2, d_ff: 32 },
];

pub const DEFAULT_MAX_SEQ_LEN: usize = 200;

impl Preset {
    pub fn by_name(name: &str) -> Result<Preset> {
        PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
            Error::Config(format!("unknown model preset {name:?} (known: {})", known.join(", ")))
        })
    }

    pub fn config(&self, vocab: &GlobalVocab, dropout: f64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_head: self.n_head,
            d_ff: self.d_ff,
            dropout,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            n_questions: vocab.total_questions(),
            n_kcs: vocab.total_kcs(),
            n_datasets: vocab.dataset_slots(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.d_model == 0 || self.n_head == 0 || self.d_ff == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_head {}",
                self.d_model, self.n_head
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.max_seq_len == 0 || self.n_datasets == 0 {
            return Err(Error::Config("max_seq_len and n_datasets must be positive".into()));
        }
        Ok(())
    }

    /// Every parameter in declaration order.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let d = self.d_model;
        let mut out = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| out.push(ParamSpec { name, shape, init });
        add("emb.question".into(), vec![self.n_questions + self.n_datasets, d], Init::Normal);
        add("emb.kc".into(), vec![self.n_kcs + self.n_datasets, d], Init::Normal);
        add("emb.response".into(), vec![2, d], Init::Normal);
        add("emb.data_type".into(), vec![2, d], Init::Normal);
        add("emb.dataset".into(), vec![self.n_datasets, d], Init::Normal);
        add("emb.position".into(), vec![self.max_seq_len, d], Init::Normal);
        for b in 0..self.n_layers {
            let p = |s: &str| format!("blocks.{b}.{s}");
            add(p("ln1.gamma"), vec![d], Init::Ones);
            add(p("ln1.beta"), vec![d], Init::Zeros);
            for m in ["q", "k", "v", "o"] {
                add(p(&format!("attn.{m}.weight")), vec![d, d], Init::Normal);
                add(p(&format!("attn.{m}.bias")), vec![d], Init::Zeros);
            }
            add(p("ln2.gamma"), vec![d], Init::Ones);
            add(p("ln2.beta"), vec![d], Init::Zeros);
            add(p("intermediate.weight"), vec![self.d_ff, d], Init::Normal);
            add(p("intermediate.bias"), vec![self.d_ff], Init::Zeros);
            add(p("output.weight"), vec![d, self.d_ff], Init::Normal);
            add(p("output.bias"), vec![d], Init::Zeros);
        }
        add("final_ln.gamma".into(), vec![d], Init::Ones);
        add("final_ln.beta".into(), vec![d], Init::Zeros);
        add("head.hidden.weight".into(), vec![self.d_ff, d], Init::Normal);
        add("head.hidden.bias".into(), vec![self.d_ff], Init::Zeros);
        add("head.out.weight".into(), vec![1, self.d_ff], Init::Normal);
        add("head.out.bias".into(), vec![1], Init::Zeros);
        out
    }

    /// Trainable parameter count, computed from the layout without allocating.
    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}
