use crate::autograd::Bags;
use crate::data::{GlobalVocab, StudentSequence};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Segments of one dataset translated to table rows and padded to a common
/// length. Row `b * seq_len + j` holds step `j` of segment `b`; its target is
/// the response at step `j + 1`.
#[derive(Clone, Debug)]
pub struct EncodedBatch<T> {
    pub dataset_index: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub lengths: Vec<usize>,
    pub question_rows: Vec<usize>,
    pub kc_bags: Bags,
    pub responses: Vec<usize>,
    pub next_question_rows: Vec<usize>,
    pub next_kc_bags: Bags,
    pub targets: Vec<T>,
    /// 1 where row `b * seq_len + j` has a real next step, else 0.
    pub mask: Vec<T>,
}

impl<T: Scalar> EncodedBatch<T> {
    pub fn new(vocab: &GlobalVocab, dataset_index: usize, segments: &[&StudentSequence]) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if vocab.entry(dataset_index).is_none() {
            return Err(Error::Data(format!("dataset index {dataset_index} is not in the vocabulary")));
        }
        let seq_len = segments.iter().map(|s| s.len()).max().unwrap_or(0);
        if seq_len == 0 {
            return Err(Error::Empty("batch segments"));
        }
        let batch = segments.len();
        let n = batch * seq_len;
        let pad_q = vocab.question_row(dataset_index, usize::MAX);
        let pad_k = vocab.kc_row(dataset_index, usize::MAX);

        let mut question_rows = vec![pad_q; n];
        let mut responses = vec![0; n];
        let mut kc_rows: Vec<Vec<usize>> = vec![vec![pad_k]; n];
        for (b, s) in segments.iter().enumerate() {
            for (j, it) in s.interactions.iter().enumerate() {
                let r = b * seq_len + j;
                question_rows[r] = vocab.question_row(dataset_index, it.question_id as usize);
                kc_rows[r] = it.kc_ids.iter().map(|&k| vocab.kc_row(dataset_index, k as usize)).collect();
                responses[r] = usize::from(it.response);
            }
        }
        let mut kc_bags = Bags::with_capacity(n, n);
        let mut next_kc_bags = Bags::with_capacity(n, n);
        let mut next_question_rows = vec![pad_q; n];
        let mut targets = vec![T::zero(); n];
        let mut mask = vec![T::zero(); n];
        for (b, seg) in segments.iter().enumerate() {
            let len = seg.len();
            for j in 0..seq_len {
                let r = b * seq_len + j;
                kc_bags.push(kc_rows[r].iter().copied());
                if j + 1 < len {
                    next_question_rows[r] = question_rows[r + 1];
                    next_kc_bags.push(kc_rows[r + 1].iter().copied());
                    targets[r] = T::from_usize(responses[r + 1]).unwrap();
                    mask[r] = T::one();
                } else {
                    next_kc_bags.push([pad_k]);
                }
            }
        }
        Ok(EncodedBatch {
            dataset_index,
            batch,
            seq_len,
            lengths: segments.iter().map(|s| s.len()).collect(),
            question_rows,
            kc_bags,
            responses,
            next_question_rows,
            next_kc_bags,
            targets,
            mask,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.seq_len
    }

    /// Number of scored predictions (steps 2..len of every segment).
    pub fn n_targets(&self) -> usize {
        self.lengths.iter().map(|l| l.saturating_sub(1)).sum()
    }
}
