use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{LoReKTModel, ModelIds, ParamStore};
use crate::autograd::Tensor;
use crate::data::{DatasetSizes, DatasetSpec, GlobalVocab};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard deviation of the noise added to new embedding rows.
pub const DEFAULT_ADAPT_NOISE: f64 = 0.01;

impl<T: Scalar> LoReKTModel<T> {
    /// Extends the vocabulary to an unseen dataset without training.
    ///
    /// New question and KC rows start at the mean of the existing regular rows
    /// plus `Normal(0, 0.01)` noise; the new dataset row is the mean of the
    /// pre-trained dataset rows. Decoder and head parameters are untouched.
    pub fn zero_shot_adapt(&self, spec: &DatasetSpec, sizes: DatasetSizes, seed: u64) -> Result<Self> {
        self.zero_shot_adapt_with_noise(spec, sizes, seed, DEFAULT_ADAPT_NOISE)
    }

    pub fn zero_shot_adapt_with_noise(
        &self,
        spec: &DatasetSpec,
        sizes: DatasetSizes,
        seed: u64,
        noise_std: f64,
    ) -> Result<Self> {
        let old = &self.vocab;
        let vocab = old.extended(spec, sizes)?;
        let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = StdRng::seed_from_u64(seed);

        let mut config = self.config.clone();
        config.n_questions = vocab.total_questions();
        config.n_kcs = vocab.total_kcs();
        config.n_datasets = vocab.dataset_slots();

        let question = extend_table(
            self.params.get(self.ids.question),
            old.total_questions(),
            old.dataset_slots(),
            sizes.n_questions,
            vocab.dataset_slots(),
            &noise,
            &mut rng,
        )?;
        let kc = extend_table(
            self.params.get(self.ids.kc),
            old.total_kcs(),
            old.dataset_slots(),
            sizes.n_kcs,
            vocab.dataset_slots(),
            &noise,
            &mut rng,
        )?;
        let dataset = extend_datasets(self.params.get(self.ids.dataset), old, vocab.dataset_slots())?;

        let mut params = ParamStore::default();
        for (id, name, t) in self.params.iter() {
            let t = if id == self.ids.question {
                question.clone()
            } else if id == self.ids.kc {
                kc.clone()
            } else if id == self.ids.dataset {
                dataset.clone()
            } else {
                t.clone()
            };
            params.push(name.to_string(), t);
        }
        let ids = ModelIds::resolve(&params, config.n_layers)?;
        let model = LoReKTModel { config, vocab: vocab.clone(), params, ids };
        model.config.validate()?;
        Ok(model)
    }
}

fn mean_row<T: Scalar>(data: &[T], rows: usize, d: usize) -> Vec<T> {
    let mut mean = vec![T::zero(); d];
    if rows == 0 {
        return mean;
    }
    for r in 0..rows {
        mean.iter_mut().zip(&data[r * d..(r + 1) * d]).for_each(|(m, &x)| *m += x);
    }
    let inv = T::one() / T::from_usize(rows).unwrap();
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Regular rows, then `added` new rows, then one UNK row per dataset slot.
fn extend_table<T: Scalar>(
    table: &Tensor<T>,
    regular: usize,
    old_slots: usize,
    added: usize,
    new_slots: usize,
    noise: &Normal<f64>,
    rng: &mut StdRng,
) -> Result<Tensor<T>> {
    let d = table.cols();
    let src = table.data();
    let mean = mean_row(src, regular, d);
    let mut out = Vec::with_capacity((regular + added + new_slots) * d);
    out.extend_from_slice(&src[..regular * d]);
    for _ in 0..added {
        out.extend(mean.iter().map(|&m| m + T::lit(noise.sample(rng))));
    }
    for slot in 0..new_slots {
        if slot < old_slots {
            out.extend_from_slice(&src[(regular + slot) * d..(regular + slot + 1) * d]);
        } else {
            out.extend_from_slice(&mean);
        }
    }
    Tensor::matrix(regular + added + new_slots, d, out)
}

fn extend_datasets<T: Scalar>(table: &Tensor<T>, old: &GlobalVocab, new_slots: usize) -> Result<Tensor<T>> {
    let d = table.cols();
    let src = table.data();
    let mut mean = vec![T::zero(); d];
    for e in old.entries() {
        mean.iter_mut().zip(&src[e.dataset_index * d..(e.dataset_index + 1) * d]).for_each(|(m, &x)| *m += x);
    }
    if !old.entries().is_empty() {
        let inv = T::one() / T::from_usize(old.entries().len()).unwrap();
        mean.iter_mut().for_each(|m| *m *= inv);
    }
    let mut out = Vec::with_capacity(new_slots * d);
    for slot in 0..new_slots {
        if slot < old.dataset_slots() && old.entry(slot).is_some() {
            out.extend_from_slice(&src[slot * d..(slot + 1) * d]);
        } else {
            out.extend_from_slice(&mean);
        }
    }
    Tensor::matrix(new_slots, d, out)
}
