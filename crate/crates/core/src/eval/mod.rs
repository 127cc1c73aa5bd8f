//! AUC and accuracy over pooled next-response predictions, and per-split
//! metric reports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::StudentSequence;
use crate::error::{Error, Result};
use crate::model::{EncodedBatch, LoReKTModel};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Area under the ROC curve as the Mann-Whitney statistic, with tied
/// scores counting one half. Sorting makes this `O(n log n)`.
pub fn auc<T: Scalar>(probs: &[T], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch { op: "auc", left: probs.len(), right: labels.len() });
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::NonFinite { op: "auc" });
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 {
        return Err(Error::SingleClass { missing: "positive" });
    }
    if neg == 0 {
        return Err(Error::SingleClass { missing: "negative" });
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).expect("NaN rejected above"));
    // twice the number of (positive, negative) pairs won, ties counted once
    let mut doubled: u128 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u64, 0u64);
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        doubled += 2 * u128::from(p) * u128::from(neg_below) + u128::from(p) * u128::from(n);
        neg_below += n;
        i = j;
    }
    Ok(doubled as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64)
}

/// Fraction of predictions where `prob >= threshold` agrees with the label.
pub fn accuracy<T: Scalar>(probs: &[T], labels: &[bool], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch { op: "accuracy", left: probs.len(), right: labels.len() });
    }
    if probs.is_empty() {
        return Err(Error::Empty("accuracy"));
    }
    let t = T::lit(threshold);
    let hits = probs.iter().zip(labels).filter(|(&p, &l)| (p >= t) == l).count();
    Ok(hits as f64 / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub split: String,
    pub auc: f64,
    pub accuracy: f64,
    pub n_predictions: usize,
    pub threshold: f64,
}

/// Eval-mode predictions for steps `2..=len` of every segment, with labels.
pub fn pooled_predictions<T: Scalar>(
    model: &LoReKTModel<T>,
    dataset_index: usize,
    segments: &[StudentSequence],
    batch_size: usize,
) -> Result<(Vec<T>, Vec<bool>)> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let refs: Vec<&StudentSequence> = segments.iter().collect();
    for chunk in refs.chunks(batch_size) {
        let batch = EncodedBatch::new(model.vocab(), dataset_index, chunk)?;
        for (seg, pred) in chunk.iter().zip(model.predict(&batch)?) {
            probs.extend(pred);
            labels.extend(seg.interactions[1..].iter().map(|i| i.response));
        }
    }
    Ok((probs, labels))
}

/// Metrics of `model` on one split of the dataset at `dataset_index`.
pub fn evaluate<T: Scalar>(
    model: &LoReKTModel<T>,
    dataset_index: usize,
    split: &str,
    segments: &[StudentSequence],
    batch_size: usize,
) -> Result<MetricsReport> {
    let dataset = model
        .vocab()
        .entry(dataset_index)
        .map(|e| e.name.clone())
        .ok_or_else(|| Error::Data(format!("dataset index {dataset_index} is not in the vocabulary")))?;
    let (probs, labels) = pooled_predictions(model, dataset_index, segments, batch_size)?;
    if probs.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    Ok(MetricsReport {
        dataset,
        split: split.to_string(),
        auc: auc(&probs, &labels)?,
        accuracy: accuracy(&probs, &labels, DEFAULT_THRESHOLD)?,
        n_predictions: probs.len(),
        threshold: DEFAULT_THRESHOLD,
    })
}

pub fn write_reports_json<W: Write>(w: W, reports: &[MetricsReport]) -> Result<()> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}

/// CSV with columns `dataset,split,n,auc,accuracy`.
pub fn write_reports_csv<W: Write>(mut w: W, reports: &[MetricsReport]) -> Result<()> {
    writeln!(w, "dataset,split,n,auc,accuracy")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{}", csv_field(&r.dataset), csv_field(&r.split), r.n_predictions, r.auc, r.accuracy)?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
