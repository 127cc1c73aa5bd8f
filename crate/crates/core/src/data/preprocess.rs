use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::StudentSequence;
use crate::error::{Error, Result};

/// Sequences shorter than this are dropped.
pub const MIN_SEQ_LEN: usize = 3;
/// Longer sequences are cut into consecutive segments of at most this length.
pub const MAX_SEQ_LEN: usize = 200;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<StudentSequence>,
    pub valid: Vec<StudentSequence>,
    pub test: Vec<StudentSequence>,
}

/// Drops sequences shorter than [`MIN_SEQ_LEN`] and cuts longer ones into
/// `MAX_SEQ_LEN` chunks; a trailing chunk shorter than `MIN_SEQ_LEN` is dropped.
/// Segments keep their student's id. Applying this twice changes nothing.
pub fn filter_and_segment(sequences: &[StudentSequence]) -> Vec<StudentSequence> {
    let mut out = Vec::new();
    for s in sequences {
        for chunk in s.interactions.chunks(MAX_SEQ_LEN) {
            if chunk.len() >= MIN_SEQ_LEN {
                out.push(StudentSequence { student_id: s.student_id.clone(), interactions: chunk.to_vec() });
            }
        }
    }
    out
}

/// Student-level shuffle split: 80% train+valid / 20% test, then the first
/// portion 90% train / 10% valid. All segments of a student land together.
pub fn split_students(segments: Vec<StudentSequence>, seed: u64) -> Result<Splits> {
    if segments.is_empty() {
        return Err(Error::Data("no sequences survive preprocessing".into()));
    }
    let mut students: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for s in &segments {
        if seen.insert(s.student_id.as_str()) {
            students.push(s.student_id.as_str());
        }
    }
    students.shuffle(&mut StdRng::seed_from_u64(seed));
    let n = students.len();
    let mut n_tv = (n * 4 + 2) / 5;
    if n >= 2 {
        n_tv = n_tv.clamp(1, n - 1);
    }
    let mut n_valid = (n_tv + 5) / 10;
    if n_tv >= 2 {
        n_valid = n_valid.max(1);
    }
    let n_train = n_tv - n_valid;

    #[derive(Clone, Copy)]
    enum Part {
        Train,
        Valid,
        Test,
    }
    let assignment: std::collections::HashMap<String, Part> = students
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let part = if i < n_train {
                Part::Train
            } else if i < n_tv {
                Part::Valid
            } else {
                Part::Test
            };
            (s.to_string(), part)
        })
        .collect();

    let mut splits = Splits::default();
    for s in segments {
        match assignment[&s.student_id] {
            Part::Train => splits.train.push(s),
            Part::Valid => splits.valid.push(s),
            Part::Test => splits.test.push(s),
        }
    }
    Ok(splits)
}

/// The full protocol: [`filter_and_segment`] then [`split_students`].
pub fn preprocess(sequences: &[StudentSequence], seed: u64) -> Result<Splits> {
    if sequences.is_empty() {
        return Err(Error::Empty("preprocess"));
    }
    split_students(filter_and_segment(sequences), seed)
}
