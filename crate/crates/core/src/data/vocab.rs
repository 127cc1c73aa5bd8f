use serde::{Deserialize, Serialize};

use super::{DatasetSpec, StudentSequence};
use crate::error::{Error, Result};

/// Number of distinct local question and KC ids of a dataset (max id + 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub n_questions: usize,
    pub n_kcs: usize,
}

impl DatasetSizes {
    pub fn from_sequences<'a, I>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a StudentSequence>,
    {
        let mut sizes = DatasetSizes::default();
        for i in sequences.into_iter().flat_map(|s| &s.interactions) {
            sizes.n_questions = sizes.n_questions.max(i.question_id as usize + 1);
            for &k in &i.kc_ids {
                sizes.n_kcs = sizes.n_kcs.max(k as usize + 1);
            }
        }
        sizes
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub dataset_index: usize,
    pub question_offset: usize,
    pub n_questions: usize,
    pub kc_offset: usize,
    pub n_kcs: usize,
}

/// Joint id space over several datasets. Each dataset owns a contiguous range
/// of global question ids and of global KC ids, assigned in dataset-index
/// order. Embedding tables hold one extra UNK row per dataset index after the
/// regular rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalVocab {
    entries: Vec<VocabEntry>,
    total_questions: usize,
    total_kcs: usize,
}

/// Assigns offsets to `specs` in dataset-index order.
pub fn build_vocab(specs: &[DatasetSpec], sizes: &[DatasetSizes]) -> Result<GlobalVocab> {
    if specs.is_empty() {
        return Err(Error::Empty("build_vocab"));
    }
    if specs.len() != sizes.len() {
        return Err(Error::LengthMismatch { op: "build_vocab", left: specs.len(), right: sizes.len() });
    }
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by_key(|&i| specs[i].dataset_index);
    let mut vocab = GlobalVocab { entries: Vec::new(), total_questions: 0, total_kcs: 0 };
    for i in order {
        vocab = vocab.extended(&specs[i], sizes[i])?;
    }
    Ok(vocab)
}

impl GlobalVocab {
    /// A vocabulary with `spec` appended after the existing ranges.
    pub fn extended(&self, spec: &DatasetSpec, sizes: DatasetSizes) -> Result<Self> {
        if self.entries.iter().any(|e| e.dataset_index == spec.dataset_index) {
            return Err(Error::Config(format!("dataset index {} is used twice", spec.dataset_index)));
        }
        if self.entries.iter().any(|e| e.name == spec.name) {
            return Err(Error::Config(format!("dataset name {:?} is used twice", spec.name)));
        }
        let mut next = self.clone();
        next.entries.push(VocabEntry {
            name: spec.name.clone(),
            dataset_index: spec.dataset_index,
            question_offset: self.total_questions,
            n_questions: sizes.n_questions,
            kc_offset: self.total_kcs,
            n_kcs: sizes.n_kcs,
        });
        next.total_questions += sizes.n_questions;
        next.total_kcs += sizes.n_kcs;
        Ok(next)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn entry(&self, dataset_index: usize) -> Option<&VocabEntry> {
        self.entries.iter().find(|e| e.dataset_index == dataset_index)
    }

    pub fn entry_by_name(&self, name: &str) -> Option<&VocabEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn total_questions(&self) -> usize {
        self.total_questions
    }

    pub fn total_kcs(&self) -> usize {
        self.total_kcs
    }

    /// Rows of the dataset-embedding table: one per index up to the largest.
    pub fn dataset_slots(&self) -> usize {
        self.entries.iter().map(|e| e.dataset_index + 1).max().unwrap_or(0)
    }

    pub fn question_global(&self, dataset_index: usize, local: usize) -> Option<usize> {
        let e = self.entry(dataset_index)?;
        (local < e.n_questions).then(|| e.question_offset + local)
    }

    pub fn question_local(&self, global: usize) -> Option<(usize, usize)> {
        self.entries
            .iter()
            .find(|e| (e.question_offset..e.question_offset + e.n_questions).contains(&global))
            .map(|e| (e.dataset_index, global - e.question_offset))
    }

    pub fn kc_global(&self, dataset_index: usize, local: usize) -> Option<usize> {
        let e = self.entry(dataset_index)?;
        (local < e.n_kcs).then(|| e.kc_offset + local)
    }

    pub fn kc_local(&self, global: usize) -> Option<(usize, usize)> {
        self.entries
            .iter()
            .find(|e| (e.kc_offset..e.kc_offset + e.n_kcs).contains(&global))
            .map(|e| (e.dataset_index, global - e.kc_offset))
    }

    /// Rows in the question embedding table, UNK rows included.
    pub fn question_rows(&self) -> usize {
        self.total_questions + self.dataset_slots()
    }

    pub fn kc_rows(&self) -> usize {
        self.total_kcs + self.dataset_slots()
    }

    /// Table row for a local question id; unknown ids map to the dataset's UNK row.
    pub fn question_row(&self, dataset_index: usize, local: usize) -> usize {
        self.question_global(dataset_index, local).unwrap_or(self.total_questions + dataset_index)
    }

    pub fn kc_row(&self, dataset_index: usize, local: usize) -> usize {
        self.kc_global(dataset_index, local).unwrap_or(self.total_kcs + dataset_index)
    }
}
