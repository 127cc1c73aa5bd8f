//! Pre-training over mixed datasets and plain or importance-modulated
//! fine-tuning, with Adam, global-norm clipping and early stopping on
//! validation AUC.

mod adam;
mod checkpoint;
mod early_stop;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, ManifestEntry, TrainingMetadata, FORMAT_VERSION, MAGIC};
pub use early_stop::{EarlyStopper, Verdict};

use crate::autograd::{Gradients, Graph};
use crate::data::{mix_batches, PreparedDataset, StudentSequence};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::importance::{modulate, FrozenRows, ImportanceProfile};
use crate::model::{EncodedBatch, LoReKTModel, ParamStore};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub const LEARNING_RATE_GRID: [f64; 2] = [1e-3, 1e-4];
pub const DROPOUT_GRID: [f64; 2] = [0.1, 0.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            dropout: 0.1,
            max_epochs: 200,
            patience: 10,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Rejects unusable values and warns about ones outside the tuning grid.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !positive(self.eps) {
            return Err(Error::Config("learning rate and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, max epochs and patience must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !positive(c)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        if !LEARNING_RATE_GRID.contains(&self.learning_rate) {
            warn!("learning rate {} is outside the tuning grid {:?}", self.learning_rate, LEARNING_RATE_GRID);
        }
        if !DROPOUT_GRID.contains(&self.dropout) {
            warn!("dropout {} is outside the tuning grid {:?}", self.dropout, DROPOUT_GRID);
        }
        Ok(())
    }

    /// The four learning-rate and dropout combinations, other fields as in `self`.
    pub fn grid(&self) -> Vec<TrainConfig> {
        LEARNING_RATE_GRID
            .iter()
            .flat_map(|&learning_rate| {
                DROPOUT_GRID.iter().map(move |&dropout| TrainConfig { learning_rate, dropout, ..self.clone() })
            })
            .collect()
    }
}

/// Training and validation segments of one dataset.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub dataset_index: usize,
    pub train: &'a [StudentSequence],
    pub valid: &'a [StudentSequence],
}

impl<'a> TrainData<'a> {
    pub fn from_prepared(d: &'a PreparedDataset) -> Self {
        TrainData { dataset_index: d.spec.dataset_index, train: &d.splits.train, valid: &d.splits.valid }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub steps: usize,
    pub history: Vec<EpochStats>,
}

const LOSS_HISTORY: usize = 16;

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the best mean validation AUC across `data`.
pub fn fit<T: Scalar>(
    model: &mut LoReKTModel<T>,
    data: &[TrainData<'_>],
    config: &TrainConfig,
    profile: Option<&ImportanceProfile<T>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() || data.iter().any(|d| d.train.is_empty() || d.valid.is_empty()) {
        return Err(Error::Empty("training data"));
    }
    if let Some(p) = profile {
        p.check_against(model)?;
    }
    model.set_dropout(config.dropout)?;
    let mut adam = Adam::new(config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut stopper = EarlyStopper::new(config.patience);
    let mut best: Option<ParamStore<T>> = None;
    let mut history = Vec::new();
    let mut recent: Vec<f64> = Vec::new();
    let sizes: Vec<usize> = data.iter().map(|d| d.train.len()).collect();
    let mut grads = Gradients::new();
    let no_frozen = FrozenRows::default();

    'epochs: for epoch in 1..=config.max_epochs {
        let batches = mix_batches(&sizes, config.batch_size, derive_seed(config.seed, &format!("batches/{epoch}")))?;
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let mut out_of_steps = false;
        for (bi, b) in batches.iter().enumerate() {
            if config.max_steps.is_some_and(|m| adam.steps_taken() >= m) {
                out_of_steps = true;
                break;
            }
            let d = &data[b.dataset];
            let segments: Vec<&StudentSequence> = b.segments.iter().map(|&i| &d.train[i]).collect();
            let batch = EncodedBatch::new(model.vocab(), d.dataset_index, &segments)?;
            let step_seed = derive_seed(config.seed, &format!("dropout/{}", adam.steps_taken()));
            let mut g = Graph::new(true, step_seed);
            let diverged = |loss: f64, recent: &[f64]| Error::Diverged { epoch, batch: bi, loss, history: recent.to_vec() };
            let loss = match model.loss(&mut g, &batch, None) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN, &recent)),
                Err(e) => return Err(e),
            };
            let value = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(diverged(value, &recent));
            }
            grads.clear();
            match g.backward(loss, &mut grads) {
                Err(Error::NonFinite { .. }) => return Err(diverged(value, &recent)),
                r => r?,
            }
            let frozen = match profile {
                Some(p) => modulate(model, &mut grads, p)?,
                None => no_frozen.clone(),
            };
            if let Some(max) = config.clip_norm {
                let norm = grads.global_norm();
                if !norm.is_finite() {
                    return Err(diverged(value, &recent));
                }
                if norm > max {
                    grads.scale(T::lit(max / norm));
                }
            }
            adam.step(model.params_mut(), &grads, &frozen);
            recent.push(value);
            if recent.len() > LOSS_HISTORY {
                recent.remove(0);
            }
            loss_sum += value;
            loss_n += 1;
        }
        if loss_n == 0 {
            break 'epochs;
        }
        let val_auc = mean_val_auc(model, data, config.batch_size)?;
        let train_loss = loss_sum / loss_n as f64;
        history.push(EpochStats { epoch, train_loss, val_auc });
        let verdict = stopper.observe(epoch, val_auc);
        info!("epoch {epoch}: train loss {train_loss:.5}, mean val AUC {val_auc:.5} ({verdict:?})");
        if verdict == Verdict::Improved {
            best = Some(model.params().clone());
        }
        if verdict == Verdict::Stop {
            debug!("patience of {} epochs exhausted", config.patience);
            break;
        }
        if out_of_steps {
            break;
        }
    }
    let (best_epoch, best_val_auc) = stopper.best().ok_or(Error::Empty("training epochs"))?;
    if let Some(p) = best {
        *model.params_mut() = p;
    }
    Ok(TrainOutcome { best_epoch, best_val_auc, steps: adam.steps_taken(), history })
}

/// Unweighted mean of per-dataset validation AUCs.
pub fn mean_val_auc<T: Scalar>(model: &LoReKTModel<T>, data: &[TrainData<'_>], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for d in data {
        total += evaluate(model, d.dataset_index, "valid", d.valid, batch_size)?.auc;
    }
    Ok(total / data.len() as f64)
}

/// Joint training on several rich datasets that share the model's vocabulary.
pub fn pretrain<T: Scalar>(
    model: &mut LoReKTModel<T>,
    datasets: &[PreparedDataset],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let data: Vec<TrainData<'_>> = datasets.iter().map(TrainData::from_prepared).collect();
    fit(model, &data, config, None)
}

/// Training on one target dataset, with gradients modulated by `profile`
/// when one is given.
pub fn finetune<T: Scalar>(
    model: &mut LoReKTModel<T>,
    dataset: &PreparedDataset,
    config: &TrainConfig,
    profile: Option<&ImportanceProfile<T>>,
) -> Result<TrainOutcome> {
    fit(model, &[TrainData::from_prepared(dataset)], config, profile)
}
