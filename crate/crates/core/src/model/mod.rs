//! The knowledge-tracing network: additive interaction encoding over six
//! embedding families, a stack of pre-norm causal decoder blocks, and a
//! query-conditioned prediction head.

mod adapt;
mod batch;
mod config;
mod params;

use std::collections::BTreeMap;
use std::fmt;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adapt::DEFAULT_ADAPT_NOISE;
pub use batch::EncodedBatch;
pub use config::{Init, ModelConfig, ParamSpec, Preset, DEFAULT_MAX_SEQ_LEN, PRESETS};
pub use params::ParamStore;

use crate::autograd::{Bags, GateId, GateParam, Graph, ParamId, Tensor, Var};
use crate::data::GlobalVocab;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard deviation of the weight initializer.
pub const INIT_STD: f64 = 0.02;

const QUESTION_TOKEN: usize = 0;
const CONCEPT_TOKEN: usize = 1;

/// The three gated sublayers of a decoder block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SublayerKind {
    Attention,
    Intermediate,
    Output,
}

impl SublayerKind {
    pub const ALL: [SublayerKind; 3] = [SublayerKind::Attention, SublayerKind::Intermediate, SublayerKind::Output];

    fn index(self) -> usize {
        match self {
            SublayerKind::Attention => 0,
            SublayerKind::Intermediate => 1,
            SublayerKind::Output => 2,
        }
    }
}

impl fmt::Display for SublayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SublayerKind::Attention => "attention",
            SublayerKind::Intermediate => "intermediate",
            SublayerKind::Output => "output",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId {
    pub block: usize,
    pub kind: SublayerKind,
}

impl LayerId {
    pub fn gate_id(self) -> GateId {
        GateId(self.block * 3 + self.kind.index())
    }
}

/// All-ones gates for every sublayer of a model.
#[derive(Clone, Debug)]
pub struct GateSet<T> {
    gates: BTreeMap<LayerId, GateParam<T>>,
}

impl<T: Scalar> GateSet<T> {
    pub fn get(&self, layer: LayerId) -> Option<&GateParam<T>> {
        self.gates.get(&layer)
    }

    pub fn get_mut(&mut self, layer: LayerId) -> Option<&mut GateParam<T>> {
        self.gates.get_mut(&layer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerId, &GateParam<T>)> {
        self.gates.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&LayerId, &mut GateParam<T>)> {
        self.gates.iter_mut()
    }

    pub fn reset(&mut self) {
        self.gates.values_mut().for_each(GateParam::reset);
    }
}

#[derive(Clone, Debug)]
struct BlockIds {
    ln1: (ParamId, ParamId),
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    intermediate: (ParamId, ParamId),
    output: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct ModelIds {
    question: ParamId,
    kc: ParamId,
    response: ParamId,
    data_type: ParamId,
    dataset: ParamId,
    position: ParamId,
    blocks: Vec<BlockIds>,
    final_ln: (ParamId, ParamId),
    head_hidden: (ParamId, ParamId),
    head_out: (ParamId, ParamId),
}

impl ModelIds {
    fn resolve<T: Scalar>(store: &ParamStore<T>, n_layers: usize) -> Result<Self> {
        let id = |n: &str| store.id(n);
        let pair = |n: &str| -> Result<(ParamId, ParamId)> {
            if n.ends_with("ln1") || n.ends_with("ln2") || n.ends_with("final_ln") {
                Ok((store.id(&format!("{n}.gamma"))?, store.id(&format!("{n}.beta"))?))
            } else {
                Ok((store.id(&format!("{n}.weight"))?, store.id(&format!("{n}.bias"))?))
            }
        };
        let blocks = (0..n_layers)
            .map(|b| {
                let p = |s: &str| format!("blocks.{b}.{s}");
                Ok(BlockIds {
                    ln1: pair(&p("ln1"))?,
                    q: pair(&p("attn.q"))?,
                    k: pair(&p("attn.k"))?,
                    v: pair(&p("attn.v"))?,
                    o: pair(&p("attn.o"))?,
                    ln2: pair(&p("ln2"))?,
                    intermediate: pair(&p("intermediate"))?,
                    output: pair(&p("output"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelIds {
            question: id("emb.question")?,
            kc: id("emb.kc")?,
            response: id("emb.response")?,
            data_type: id("emb.data_type")?,
            dataset: id("emb.dataset")?,
            position: id("emb.position")?,
            blocks,
            final_ln: pair("final_ln")?,
            head_hidden: pair("head.hidden")?,
            head_out: pair("head.out")?,
        })
    }
}

/// Parameter leaves registered on one graph, created on first use.
struct Leaves<'m, T> {
    store: &'m ParamStore<T>,
    vars: BTreeMap<ParamId, Var>,
}

impl<'m, T: Scalar> Leaves<'m, T> {
    fn get(&mut self, g: &mut Graph<T>, id: ParamId) -> Var {
        *self.vars.entry(id).or_insert_with(|| g.param(id, self.store.get(id)))
    }
}

#[derive(Clone, Debug)]
pub struct LoReKTModel<T> {
    config: ModelConfig,
    vocab: GlobalVocab,
    params: ParamStore<T>,
    ids: ModelIds,
}

impl<T: Scalar> LoReKTModel<T> {
    /// Allocates and initializes a model: weights and embeddings from
    /// `Normal(0, 0.02)`, biases zero, layer-norm scales one.
    pub fn build(config: ModelConfig, vocab: GlobalVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        check_vocab(&config, &vocab)?;
        let mut rng = StdRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let mut params = ParamStore::default();
        for spec in config.layout() {
            let n = spec.shape.iter().product();
            let data: Vec<T> = match spec.init {
                Init::Normal => (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect(),
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            params.push(spec.name, Tensor::new(spec.shape, data)?);
        }
        Self::from_parts(config, vocab, params)
    }

    /// Assembles a model from existing tensors, checking them against the
    /// layout implied by `config`.
    pub fn from_parts(config: ModelConfig, vocab: GlobalVocab, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        check_vocab(&config, &vocab)?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", layout.len(), params.len())));
        }
        for (spec, (_, name, t)) in layout.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match layout entry {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        let ids = ModelIds::resolve(&params, config.n_layers)?;
        Ok(LoReKTModel { config, vocab, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &GlobalVocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelConfig, GlobalVocab, ParamStore<T>) {
        (self.config, self.vocab, self.params)
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
        }
        self.config.dropout = p;
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Every gated sublayer, block by block.
    pub fn layers(&self) -> impl Iterator<Item = LayerId> + '_ {
        (0..self.config.n_layers)
            .flat_map(|block| SublayerKind::ALL.into_iter().map(move |kind| LayerId { block, kind }))
    }

    /// Output width of a gated sublayer.
    pub fn layer_width(&self, layer: LayerId) -> usize {
        match layer.kind {
            SublayerKind::Intermediate => self.config.d_ff,
            _ => self.config.d_model,
        }
    }

    /// Parameters whose output rows correspond to the units of `layer`.
    /// Attention covers the query, key, value and output projections.
    pub fn sublayer_params(&self, layer: LayerId) -> Vec<ParamId> {
        let b = &self.ids.blocks[layer.block];
        match layer.kind {
            SublayerKind::Attention => vec![b.q.0, b.q.1, b.k.0, b.k.1, b.v.0, b.v.1, b.o.0, b.o.1],
            SublayerKind::Intermediate => vec![b.intermediate.0, b.intermediate.1],
            SublayerKind::Output => vec![b.output.0, b.output.1],
        }
    }

    /// Fresh all-ones gates, one per sublayer.
    pub fn gates(&self) -> GateSet<T> {
        let gates = self.layers().map(|l| (l, GateParam::ones(l.gate_id(), self.layer_width(l)))).collect();
        GateSet { gates }
    }

    fn leaves(&self) -> Leaves<'_, T> {
        Leaves { store: &self.params, vars: BTreeMap::new() }
    }

    /// Step vector: question + QUESTION type + mean over KCs of (KC + CONCEPT
    /// type) + response + dataset + position. Returns `[batch * seq_len, d]`.
    pub fn encode(&self, g: &mut Graph<T>, batch: &EncodedBatch<T>) -> Result<Var> {
        let mut leaves = self.leaves();
        self.encode_with(g, &mut leaves, batch)
    }

    fn encode_with(&self, g: &mut Graph<T>, leaves: &mut Leaves<'_, T>, batch: &EncodedBatch<T>) -> Result<Var> {
        if batch.seq_len > self.config.max_seq_len {
            return Err(Error::Data(format!(
                "sequence length {} exceeds the position table ({})",
                batch.seq_len, self.config.max_seq_len
            )));
        }
        if batch.dataset_index >= self.config.n_datasets {
            return Err(Error::Data(format!("dataset index {} has no embedding", batch.dataset_index)));
        }
        let n = batch.rows();
        let query = self.query_embedding(g, leaves, &batch.question_rows, &batch.kc_bags)?;
        let response = leaves.get(g, self.ids.response);
        let dataset = leaves.get(g, self.ids.dataset);
        let position = leaves.get(g, self.ids.position);
        let r = g.embedding(response, Bags::singletons(batch.responses.clone()))?;
        let d = g.embedding(dataset, Bags::singletons(vec![batch.dataset_index; n]))?;
        let p = g.embedding(position, Bags::singletons((0..n).map(|i| i % batch.seq_len).collect()))?;
        let x = g.add(query, r)?;
        let x = g.add(x, d)?;
        g.add(x, p)
    }

    /// Question + QUESTION type + mean over KCs of (KC + CONCEPT type).
    fn query_embedding(
        &self,
        g: &mut Graph<T>,
        leaves: &mut Leaves<'_, T>,
        question_rows: &[usize],
        kc_bags: &Bags,
    ) -> Result<Var> {
        let n = question_rows.len();
        let question = leaves.get(g, self.ids.question);
        let kc = leaves.get(g, self.ids.kc);
        let data_type = leaves.get(g, self.ids.data_type);
        let q = g.embedding(question, Bags::singletons(question_rows.to_vec()))?;
        let tq = g.embedding(data_type, Bags::singletons(vec![QUESTION_TOKEN; n]))?;
        let k = g.embedding(kc, kc_bags.clone())?;
        let tc = g.embedding(data_type, Bags::singletons(vec![CONCEPT_TOKEN; n]))?;
        let x = g.add(q, tq)?;
        let x = g.add(x, k)?;
        g.add(x, tc)
    }

    /// Predicted probability of a correct next response, `[batch * seq_len, 1]`.
    /// Row `b * seq_len + j` predicts step `j + 1`; rows past a segment's end
    /// are meaningless and masked by [`EncodedBatch::mask`].
    pub fn forward(&self, g: &mut Graph<T>, batch: &EncodedBatch<T>, gates: Option<&GateSet<T>>) -> Result<Var> {
        let mut leaves = self.leaves();
        let dropout = self.config.dropout;
        let x = self.encode_with(g, &mut leaves, batch)?;
        let mut x = g.dropout(x, dropout)?;
        for (bi, ids) in self.ids.blocks.iter().enumerate() {
            let gate = |kind| -> Result<Option<&GateParam<T>>> {
                match gates {
                    None => Ok(None),
                    Some(set) => set
                        .get(LayerId { block: bi, kind })
                        .map(Some)
                        .ok_or(Error::MissingLayer { block: bi, kind: kind.to_string() }),
                }
            };
            let groups = batch.batch;

            let a = self.layer_norm(g, &mut leaves, x, ids.ln1)?;
            let q = self.linear(g, &mut leaves, a, ids.q)?;
            let k = self.linear(g, &mut leaves, a, ids.k)?;
            let v = self.linear(g, &mut leaves, a, ids.v)?;
            let att = g.causal_attention(q, k, v, batch.batch, batch.seq_len, self.config.n_head)?;
            let mut o = self.linear(g, &mut leaves, att, ids.o)?;
            if let Some(gp) = gate(SublayerKind::Attention)? {
                o = gp.apply(g, o, groups)?;
            }
            let o = g.dropout(o, dropout)?;
            x = g.add(x, o)?;

            let h = self.layer_norm(g, &mut leaves, x, ids.ln2)?;
            let h = self.linear(g, &mut leaves, h, ids.intermediate)?;
            let mut h = activation(g, h)?;
            if let Some(gp) = gate(SublayerKind::Intermediate)? {
                h = gp.apply(g, h, groups)?;
            }
            let mut out = self.linear(g, &mut leaves, h, ids.output)?;
            if let Some(gp) = gate(SublayerKind::Output)? {
                out = gp.apply(g, out, groups)?;
            }
            let out = g.dropout(out, dropout)?;
            x = g.add(x, out)?;
        }
        let h = self.layer_norm(g, &mut leaves, x, self.ids.final_ln)?;
        let next = self.query_embedding(g, &mut leaves, &batch.next_question_rows, &batch.next_kc_bags)?;
        let z = g.add(h, next)?;
        let u = self.linear(g, &mut leaves, z, self.ids.head_hidden)?;
        let u = activation(g, u)?;
        let logit = self.linear(g, &mut leaves, u, self.ids.head_out)?;
        g.sigmoid(logit)
    }

    /// Masked mean BCE over every scored step of the batch.
    pub fn loss(&self, g: &mut Graph<T>, batch: &EncodedBatch<T>, gates: Option<&GateSet<T>>) -> Result<Var> {
        let probs = self.forward(g, batch, gates)?;
        g.bce_loss(probs, &batch.targets, &batch.mask)
    }

    /// Eval-mode predictions per segment, for steps `2..=len`.
    pub fn predict(&self, batch: &EncodedBatch<T>) -> Result<Vec<Vec<T>>> {
        let mut g = Graph::eval();
        let probs = self.forward(&mut g, batch, None)?;
        let data = g.value(probs).data();
        Ok(batch
            .lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| data[b * batch.seq_len..b * batch.seq_len + len.saturating_sub(1)].to_vec())
            .collect())
    }

    fn linear(&self, g: &mut Graph<T>, leaves: &mut Leaves<'_, T>, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let w = leaves.get(g, w);
        let b = leaves.get(g, b);
        let y = g.matmul_nt(x, w)?;
        g.add(y, b)
    }

    fn layer_norm(
        &self,
        g: &mut Graph<T>,
        leaves: &mut Leaves<'_, T>,
        x: Var,
        (gamma, beta): (ParamId, ParamId),
    ) -> Result<Var> {
        let gamma = leaves.get(g, gamma);
        let beta = leaves.get(g, beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Sigmoid-approximated GELU, `x ⊙ σ(1.702 x)`.
fn activation<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.scale(x, T::lit(1.702))?;
    let s = g.sigmoid(s)?;
    g.mul(x, s)
}

fn check_vocab(config: &ModelConfig, vocab: &GlobalVocab) -> Result<()> {
    if config.n_questions != vocab.total_questions()
        || config.n_kcs != vocab.total_kcs()
        || config.n_datasets != vocab.dataset_slots()
    {
        return Err(Error::Config(format!(
            "model sized for {}/{}/{} questions/KCs/datasets but the vocabulary has {}/{}/{}",
            config.n_questions,
            config.n_kcs,
            config.n_datasets,
            vocab.total_questions(),
            vocab.total_kcs(),
            vocab.dataset_slots()
        )));
    }
    Ok(())
}
