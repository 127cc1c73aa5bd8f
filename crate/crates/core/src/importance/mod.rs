//! Per-unit importance of every gated sublayer, read off as the mean absolute
//! loss gradient of an all-ones gate, and the gradient modulation that uses it
//! during fine-tuning.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Gradients, ParamId, Tensor};
use crate::data::StudentSequence;
use crate::error::{Error, Result};
use crate::model::{EncodedBatch, LayerId, LoReKTModel, SublayerKind};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerImportance<T> {
    pub layer: LayerId,
    pub values: Vec<T>,
    pub normalized: bool,
}

impl<T: Scalar> LayerImportance<T> {
    pub fn new(layer: LayerId, values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidTensor(format!("importance of {layer:?} must be finite and non-negative")));
        }
        Ok(LayerImportance { layer, values, normalized: false })
    }

    /// Divides by the largest value. An all-zero vector stays zero.
    pub fn normalize(&mut self) {
        let max = self.values.iter().copied().fold(T::zero(), T::max);
        if max > T::zero() {
            self.values.iter_mut().for_each(|v| *v /= max);
        }
        self.normalized = true;
    }
}

/// Copies `imp` across the input dimension of a parameter whose leading axis
/// is the sublayer's output: `[out, in]` gets row `i` filled with `values[i]`,
/// `[out]` gets `values` itself.
pub fn expand_importance<T: Scalar>(imp: &LayerImportance<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let out = *shape.first().ok_or(Error::Shape { op: "expand_importance", lhs: vec![], rhs: vec![] })?;
    if out != imp.values.len() || shape.len() > 2 {
        return Err(Error::Shape { op: "expand_importance", lhs: shape.to_vec(), rhs: vec![imp.values.len()] });
    }
    let cols = shape.get(1).copied().unwrap_or(1);
    let data = imp.values.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Importance vectors of every gated sublayer for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceProfile<T> {
    pub dataset: String,
    /// Number of sequences the gradients were averaged over.
    pub n_samples: usize,
    layers: BTreeMap<LayerId, LayerImportance<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    dataset: String,
    n_samples: usize,
    layers: Vec<LayerEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    block: usize,
    kind: SublayerKind,
    values: Vec<f32>,
}

impl<T: Scalar> ImportanceProfile<T> {
    pub fn new(dataset: impl Into<String>, n_samples: usize, layers: Vec<LayerImportance<T>>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for l in layers {
            if map.insert(l.layer, l).is_some() {
                return Err(Error::Data("importance profile lists a layer twice".into()));
            }
        }
        Ok(ImportanceProfile { dataset: dataset.into(), n_samples, layers: map })
    }

    /// The same value for every unit of every sublayer of `model`.
    pub fn uniform(model: &LoReKTModel<T>, value: T) -> Self {
        let layers = model
            .layers()
            .map(|l| (l, LayerImportance { layer: l, values: vec![value; model.layer_width(l)], normalized: true }))
            .collect();
        ImportanceProfile { dataset: String::new(), n_samples: 0, layers }
    }

    pub fn get(&self, layer: LayerId) -> Option<&LayerImportance<T>> {
        self.layers.get(&layer)
    }

    pub fn get_mut(&mut self, layer: LayerId) -> Option<&mut LayerImportance<T>> {
        self.layers.get_mut(&layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerImportance<T>> {
        self.layers.values()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn normalize(&mut self) {
        self.layers.values_mut().for_each(LayerImportance::normalize);
    }

    /// Checks that the profile covers exactly the gated sublayers of `model`
    /// with matching widths.
    pub fn check_against(&self, model: &LoReKTModel<T>) -> Result<()> {
        for layer in model.layers() {
            let imp = self
                .get(layer)
                .ok_or(Error::MissingLayer { block: layer.block, kind: layer.kind.to_string() })?;
            if imp.values.len() != model.layer_width(layer) {
                return Err(Error::Shape {
                    op: "importance profile",
                    lhs: vec![imp.values.len()],
                    rhs: vec![model.layer_width(layer)],
                });
            }
        }
        if self.len() != model.config().n_layers * SublayerKind::ALL.len() {
            return Err(Error::Data(format!(
                "importance profile has {} layers, the model has {}",
                self.len(),
                model.config().n_layers * SublayerKind::ALL.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProfileFile {
            dataset: self.dataset.clone(),
            n_samples: self.n_samples,
            layers: self
                .layers
                .values()
                .map(|l| LayerEntry {
                    block: l.layer.block,
                    kind: l.layer.kind,
                    values: l.values.iter().map(|v| v.to_f32_lossy()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses a stored profile; stored profiles are taken as final.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProfileFile = serde_json::from_str(text)?;
        let layers = file
            .layers
            .into_iter()
            .map(|e| {
                let mut l = LayerImportance::new(
                    LayerId { block: e.block, kind: e.kind },
                    e.values.into_iter().map(<T as Scalar>::from_f32).collect(),
                )?;
                l.normalized = true;
                Ok(l)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.dataset, file.n_samples, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Max-normalized importance of every gated sublayer on `segments` of the
/// dataset at `dataset_index`.
pub fn compute_importance<T: Scalar>(
    model: &LoReKTModel<T>,
    dataset_index: usize,
    segments: &[StudentSequence],
    batch_size: usize,
) -> Result<ImportanceProfile<T>> {
    let mut profile = compute_raw_importance(model, dataset_index, segments, batch_size, T::one())?;
    profile.normalize();
    Ok(profile)
}

/// `(1/N) Σ_n |∂(c·L_n)/∂g|` per gate unit, where `L_n` is the mean
/// next-response cross-entropy of sequence `n` and `c` is `loss_scale`.
///
/// Each sequence gets its own copy of every gate, so the gradient of the
/// summed batch loss with respect to that copy is the gradient of `L_n`
/// alone. The model runs in eval mode and nothing is updated.
pub fn compute_raw_importance<T: Scalar>(
    model: &LoReKTModel<T>,
    dataset_index: usize,
    segments: &[StudentSequence],
    batch_size: usize,
    loss_scale: T,
) -> Result<ImportanceProfile<T>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let scored: Vec<&StudentSequence> = segments.iter().filter(|s| s.len() >= 2).collect();
    if scored.is_empty() {
        return Err(Error::Empty("importance dataset"));
    }
    let name = model
        .vocab()
        .entry(dataset_index)
        .map(|e| e.name.clone())
        .ok_or_else(|| Error::Data(format!("dataset index {dataset_index} is not in the vocabulary")))?;
    let mut gates = model.gates();
    let mut grads = Gradients::new();
    for chunk in scored.chunks(batch_size) {
        let batch = EncodedBatch::new(model.vocab(), dataset_index, chunk)?;
        let weights: Vec<T> = batch
            .mask
            .iter()
            .enumerate()
            .map(|(r, &m)| {
                let scored_steps = T::from_usize(batch.lengths[r / batch.seq_len] - 1).unwrap();
                m * loss_scale / scored_steps
            })
            .collect();
        let mut g = Graph::eval();
        let probs = model.forward(&mut g, &batch, Some(&gates))?;
        let loss = g.bce_weighted_sum(probs, &batch.targets, &weights)?;
        grads.clear();
        g.backward(loss, &mut grads)?;
        for (layer, gate) in gates.iter_mut() {
            let grad = grads
                .gate(gate.id())
                .ok_or(Error::MissingLayer { block: layer.block, kind: layer.kind.to_string() })?;
            gate.accumulate_abs(grad)?;
        }
    }
    let n = T::from_usize(scored.len()).unwrap();
    let layers = gates
        .iter()
        .map(|(&layer, gate)| LayerImportance::new(layer, gate.captured_grad().iter().map(|&v| v / n).collect()))
        .collect::<Result<Vec<_>>>()?;
    if layers.iter().all(|l| l.values.iter().all(|v| *v == T::zero())) {
        warn!("importance is zero for every unit of every layer on {name}; the model may be degenerate");
    }
    ImportanceProfile::new(name, scored.len(), layers)
}

/// Rows of each parameter whose importance mask row is entirely zero.
/// The optimizer leaves these rows, and their moment estimates, untouched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenRows {
    rows: BTreeMap<ParamId, Vec<bool>>,
}

impl FrozenRows {
    pub fn get(&self, id: ParamId) -> Option<&[bool]> {
        self.rows.get(&id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self) -> usize {
        self.rows.values().map(|r| r.iter().filter(|&&f| f).count()).sum()
    }
}

/// Multiplies the gradient of every gated-sublayer parameter by its expanded
/// importance mask. Embeddings, layer norms and the head are left alone.
pub fn modulate<T: Scalar>(
    model: &LoReKTModel<T>,
    grads: &mut Gradients<T>,
    profile: &ImportanceProfile<T>,
) -> Result<FrozenRows> {
    profile.check_against(model)?;
    let mut frozen = FrozenRows::default();
    for layer in model.layers() {
        let imp = profile.get(layer).expect("checked above");
        let dead: Vec<bool> = imp.values.iter().map(|v| *v == T::zero()).collect();
        for id in model.sublayer_params(layer) {
            if let Some(grad) = grads.param_mut(id) {
                let mask = expand_importance(imp, grad.shape())?;
                grad.data_mut().iter_mut().zip(mask.data()).for_each(|(g, &m)| *g *= m);
            }
            if dead.iter().any(|&d| d) {
                frozen.rows.insert(id, dead.clone());
            }
        }
    }
    Ok(frozen)
}
