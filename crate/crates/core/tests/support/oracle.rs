//! A straight-line re-implementation of the network on one sequence at a
//! time, written with plain loops over a generic number type. With `f64` it
//! checks the forward pass; with [`Dual`] it differentiates the per-sequence
//! loss with respect to single gate units in forward mode, which gives an
//! autodiff-free reference for the gate gradients.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use lorekt::data::StudentSequence;
use lorekt::model::{LayerId, LoReKTModel, SublayerKind};

pub trait Num: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self> {
    fn c(x: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn val(self) -> f64;
}

impl Num for f64 {
    fn c(x: f64) -> Self {
        x
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn val(self) -> f64 {
        self
    }
}

/// `v + d·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { v: -self.v, d: -self.d }
    }
}

impl Num for Dual {
    fn c(x: f64) -> Self {
        Dual { v: x, d: 0.0 }
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual { v: e, d: self.d * e }
    }
    fn ln(self) -> Self {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual { v: s, d: self.d / (2.0 * s) }
    }
    fn val(self) -> f64 {
        self.v
    }
}

/// Model weights as nested `f64` rows, looked up by parameter name.
pub struct Weights {
    tensors: HashMap<String, (Vec<usize>, Vec<f64>)>,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub d_ff: usize,
}

impl Weights {
    pub fn of(model: &LoReKTModel<f64>) -> Self {
        let tensors = model
            .params()
            .iter()
            .map(|(_, name, t)| (name.to_string(), (t.shape().to_vec(), t.data().to_vec())))
            .collect();
        let c = model.config();
        Weights { tensors, n_layers: c.n_layers, d_model: c.d_model, n_head: c.n_head, d_ff: c.d_ff }
    }

    fn row<N: Num>(&self, name: &str, r: usize) -> Vec<N> {
        let (shape, data) = &self.tensors[name];
        let cols = if shape.len() == 2 { shape[1] } else { shape[0] };
        data[r * cols..(r + 1) * cols].iter().map(|&x| N::c(x)).collect()
    }

    fn vector<N: Num>(&self, name: &str) -> Vec<N> {
        self.row(name, 0)
    }

    /// `W x + b` for `W` stored as `[out, in]`.
    fn linear<N: Num>(&self, prefix: &str, x: &[N]) -> Vec<N> {
        let (shape, w) = &self.tensors[&format!("{prefix}.weight")];
        let b = &self.tensors[&format!("{prefix}.bias")].1;
        (0..shape[0])
            .map(|i| {
                let mut acc = N::c(b[i]);
                for j in 0..shape[1] {
                    acc = acc + N::c(w[i * shape[1] + j]) * x[j];
                }
                acc
            })
            .collect()
    }

    fn layer_norm<N: Num>(&self, prefix: &str, x: &[N]) -> Vec<N> {
        let n = N::c(x.len() as f64);
        let mut mean = N::c(0.0);
        for &v in x {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = N::c(0.0);
        for &v in x {
            var = var + (v - mean) * (v - mean);
        }
        var = var / n;
        let denom = (var + N::c(1e-5)).sqrt();
        let gamma: Vec<N> = self.vector(&format!("{prefix}.gamma"));
        let beta: Vec<N> = self.vector(&format!("{prefix}.beta"));
        x.iter().enumerate().map(|(j, &v)| (v - mean) / denom * gamma[j] + beta[j]).collect()
    }
}

fn sigmoid<N: Num>(x: N) -> N {
    N::c(1.0) / (N::c(1.0) + (-x).exp())
}

fn act<N: Num>(x: N) -> N {
    x * sigmoid(N::c(1.702) * x)
}

/// Per-sequence gate vectors; `None` runs ungated.
pub type Gates<N> = HashMap<LayerId, Vec<N>>;

fn gated<N: Num>(gates: Option<&Gates<N>>, layer: LayerId, x: Vec<N>) -> Vec<N> {
    match gates {
        Some(g) => x.iter().zip(&g[&layer]).map(|(&a, &b)| a * b).collect(),
        None => x,
    }
}

fn add<N: Num>(a: &[N], b: &[N]) -> Vec<N> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Table rows used by one sequence, resolved through the vocabulary.
pub struct Rows {
    pub dataset: usize,
    pub questions: Vec<usize>,
    pub kcs: Vec<Vec<usize>>,
    pub responses: Vec<usize>,
}

impl Rows {
    pub fn of(model: &LoReKTModel<f64>, dataset: usize, s: &StudentSequence) -> Self {
        let v = model.vocab();
        Rows {
            dataset,
            questions: s.interactions.iter().map(|i| v.question_row(dataset, i.question_id as usize)).collect(),
            kcs: s
                .interactions
                .iter()
                .map(|i| i.kc_ids.iter().map(|&k| v.kc_row(dataset, k as usize)).collect())
                .collect(),
            responses: s.interactions.iter().map(|i| usize::from(i.response)).collect(),
        }
    }
}

fn query<N: Num>(w: &Weights, rows: &Rows, t: usize) -> Vec<N> {
    let d = w.d_model;
    let mut x: Vec<N> = add(&w.row("emb.question", rows.questions[t]), &w.row::<N>("emb.data_type", 0));
    let mut kc = vec![N::c(0.0); d];
    for &k in &rows.kcs[t] {
        kc = add(&kc, &w.row("emb.kc", k));
    }
    let n = N::c(rows.kcs[t].len() as f64);
    for j in 0..d {
        x[j] = x[j] + kc[j] / n;
    }
    add(&x, &w.row("emb.data_type", 1))
}

/// Predicted probabilities for steps `2..=len` of one sequence.
pub fn predict<N: Num>(w: &Weights, rows: &Rows, gates: Option<&Gates<N>>) -> Vec<N> {
    let (d, heads) = (w.d_model, w.n_head);
    let dh = d / heads;
    let len = rows.questions.len();
    let mut xs: Vec<Vec<N>> = (0..len)
        .map(|t| {
            let mut x = query(w, rows, t);
            x = add(&x, &w.row("emb.response", rows.responses[t]));
            x = add(&x, &w.row("emb.dataset", rows.dataset));
            add(&x, &w.row("emb.position", t))
        })
        .collect();
    for b in 0..w.n_layers {
        let p = |s: &str| format!("blocks.{b}.{s}");
        let a: Vec<Vec<N>> = xs.iter().map(|x| w.layer_norm(&p("ln1"), x)).collect();
        let q: Vec<Vec<N>> = a.iter().map(|x| w.linear(&p("attn.q"), x)).collect();
        let k: Vec<Vec<N>> = a.iter().map(|x| w.linear(&p("attn.k"), x)).collect();
        let v: Vec<Vec<N>> = a.iter().map(|x| w.linear(&p("attn.v"), x)).collect();
        for t in 0..len {
            let mut att = vec![N::c(0.0); d];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let scores: Vec<N> = (0..=t)
                    .map(|u| {
                        let mut s = N::c(0.0);
                        for j in cols.clone() {
                            s = s + q[t][j] * k[u][j];
                        }
                        s / N::c((dh as f64).sqrt())
                    })
                    .collect();
                let mut z = N::c(0.0);
                let e: Vec<N> = scores.iter().map(|&s| s.exp()).collect();
                for &x in &e {
                    z = z + x;
                }
                for u in 0..=t {
                    for j in cols.clone() {
                        att[j] = att[j] + e[u] / z * v[u][j];
                    }
                }
            }
            let o = w.linear(&p("attn.o"), &att);
            let o = gated(gates, LayerId { block: b, kind: SublayerKind::Attention }, o);
            xs[t] = add(&xs[t], &o);
        }
        for x in xs.iter_mut() {
            let h = w.linear(&p("intermediate"), &w.layer_norm(&p("ln2"), x));
            let h: Vec<N> = h.into_iter().map(act).collect();
            let h = gated(gates, LayerId { block: b, kind: SublayerKind::Intermediate }, h);
            let out = w.linear(&p("output"), &h);
            let out = gated(gates, LayerId { block: b, kind: SublayerKind::Output }, out);
            *x = add(x, &out);
        }
    }
    (0..len - 1)
        .map(|t| {
            let z = add(&w.layer_norm("final_ln", &xs[t]), &query(w, rows, t + 1));
            let u: Vec<N> = w.linear("head.hidden", &z).into_iter().map(act).collect();
            sigmoid(w.linear("head.out", &u)[0])
        })
        .collect()
}

/// Mean next-response cross-entropy of one sequence.
pub fn sequence_loss<N: Num>(w: &Weights, rows: &Rows, gates: Option<&Gates<N>>) -> N {
    let probs = predict(w, rows, gates);
    let mut total = N::c(0.0);
    for (t, &p) in probs.iter().enumerate() {
        let y = rows.responses[t + 1] as f64;
        total = total + N::c(y) * p.ln() + N::c(1.0 - y) * (N::c(1.0) - p).ln();
    }
    -total / N::c(probs.len() as f64)
}

/// `(1/N) Σ_n |∂L_n/∂g|` for every gate unit, one forward-mode pass per
/// (sequence, unit).
pub fn gate_importance(model: &LoReKTModel<f64>, dataset: usize, seqs: &[StudentSequence]) -> HashMap<LayerId, Vec<f64>> {
    let w = Weights::of(model);
    let layers: Vec<(LayerId, usize)> = (0..w.n_layers)
        .flat_map(|block| {
            [(SublayerKind::Attention, w.d_model), (SublayerKind::Intermediate, w.d_ff), (SublayerKind::Output, w.d_model)]
                .map(|(kind, width)| (LayerId { block, kind }, width))
        })
        .collect();
    let ones = || -> Gates<Dual> { layers.iter().map(|&(l, width)| (l, vec![Dual::c(1.0); width])).collect() };
    let mut out: HashMap<LayerId, Vec<f64>> = layers.iter().map(|&(l, width)| (l, vec![0.0; width])).collect();
    for s in seqs {
        let rows = Rows::of(model, dataset, s);
        for &(layer, width) in &layers {
            for unit in 0..width {
                let mut gates = ones();
                gates.get_mut(&layer).unwrap()[unit].d = 1.0;
                let dl = sequence_loss(&w, &rows, Some(&gates)).d;
                out.get_mut(&layer).unwrap()[unit] += dl.abs();
            }
        }
    }
    let n = seqs.len() as f64;
    out.values_mut().for_each(|v| v.iter_mut().for_each(|x| *x /= n));
    out
}
