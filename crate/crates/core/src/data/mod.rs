//! Interaction data: the dataset file format, the preprocessing protocol,
//! joint vocabularies, multi-dataset batching and a synthetic generator.

mod batch;
mod format;
mod preprocess;
mod synthetic;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use batch::{mix_batches, BatchRef};
pub use format::{ingest, parse_sequences, write_sequences, write_sequences_to_path};
pub use preprocess::{filter_and_segment, preprocess, split_students, Splits, MAX_SEQ_LEN, MIN_SEQ_LEN};
pub use synthetic::{generate_synthetic, GroundTruth, SyntheticConfig, SyntheticDataset};
pub use vocab::{build_vocab, DatasetSizes, GlobalVocab, VocabEntry};

/// One attempt: question, its knowledge components, correctness, time (ms).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub question_id: u32,
    /// Sorted, duplicate-free, never empty.
    pub kc_ids: Vec<u32>,
    pub response: bool,
    pub timestamp: u64,
}

impl Interaction {
    pub fn new(question_id: u32, mut kc_ids: Vec<u32>, response: bool, timestamp: u64) -> Self {
        kc_ids.sort_unstable();
        kc_ids.dedup();
        assert!(!kc_ids.is_empty(), "interaction without knowledge components");
        Interaction { question_id, kc_ids, response, timestamp }
    }
}

/// A student's interactions in chronological order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSequence {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    /// Row of the dataset-embedding table.
    pub dataset_index: usize,
    pub path: PathBuf,
}

/// A preprocessed dataset ready for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub spec: DatasetSpec,
    pub sizes: DatasetSizes,
    pub splits: Splits,
}

impl PreparedDataset {
    /// Preprocesses raw sequences; vocabulary sizes are taken over all of them.
    pub fn new(spec: DatasetSpec, sequences: &[StudentSequence], seed: u64) -> crate::Result<Self> {
        let sizes = DatasetSizes::from_sequences(sequences);
        let splits = preprocess(sequences, seed)?;
        Ok(PreparedDataset { spec, sizes, splits })
    }
}
