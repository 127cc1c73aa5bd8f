use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar, View, ViewMut};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Index of a trainable parameter in its owning store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Index of a virtual gate parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GateId(pub usize);

/// Variable-length lists of table rows, one list per output row (CSR layout).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bags {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Default for Bags {
    fn default() -> Self {
        Self::new()
    }
}

impl Bags {
    pub fn new() -> Self {
        Bags { offsets: vec![0], indices: Vec::new() }
    }

    pub fn with_capacity(bags: usize, indices: usize) -> Self {
        let mut offsets = Vec::with_capacity(bags + 1);
        offsets.push(0);
        Bags { offsets, indices: Vec::with_capacity(indices) }
    }

    /// One single-row bag per index.
    pub fn singletons(indices: Vec<usize>) -> Self {
        Bags { offsets: (0..=indices.len()).collect(), indices }
    }

    pub fn push<I: IntoIterator<Item = usize>>(&mut self, bag: I) {
        self.indices.extend(bag);
        self.offsets.push(self.indices.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bag(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Gradients accumulated by one or more reverse passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    params: BTreeMap<ParamId, Tensor<T>>,
    gates: BTreeMap<GateId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients { params: BTreeMap::new(), gates: BTreeMap::new() }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.params.get_mut(&id)
    }

    /// Sets the gradient of `id`, replacing any accumulated value.
    pub fn insert_param(&mut self, id: ParamId, grad: Tensor<T>) {
        self.params.insert(id, grad);
    }

    pub fn gate(&self, id: GateId) -> Option<&Tensor<T>> {
        self.gates.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn gates(&self) -> impl Iterator<Item = (GateId, &Tensor<T>)> {
        self.gates.iter().map(|(k, v)| (*k, v))
    }

    pub fn clear(&mut self) {
        self.params.clear();
        self.gates.clear();
    }

    /// L2 norm over every parameter gradient, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn add_into(map_entry: Option<&mut Tensor<T>>, shape: &[usize], dy: &[T]) -> Option<Tensor<T>> {
        match map_entry {
            Some(t) => {
                t.data_mut().iter_mut().zip(dy).for_each(|(a, &b)| *a += b);
                None
            }
            None => Some(Tensor::new(shape.to_vec(), dy.to_vec()).expect("gradient shape")),
        }
    }

    fn accumulate_param(&mut self, id: ParamId, shape: &[usize], dy: &[T]) {
        if let Some(t) = Self::add_into(self.params.get_mut(&id), shape, dy) {
            self.params.insert(id, t);
        }
    }

    fn accumulate_gate(&mut self, id: GateId, shape: &[usize], dy: &[T]) {
        if let Some(t) = Self::add_into(self.gates.get_mut(&id), shape, dy) {
            self.gates.insert(id, t);
        }
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Gate(GateId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    GateMul { x: Var, gate: Var, rows_per_group: usize },
    Embedding { table: Var, bags: Bags },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Sigmoid { x: Var },
    Attention { q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize, probs: Vec<T> },
    Concat { parts: Vec<Var> },
    Mean { x: Var, axis: usize },
    Sum { x: Var },
    Bce { probs: Var, targets: Vec<T>, weights: Vec<T>, denom: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Probability clamp applied before the BCE logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Records a forward computation and replays it in reverse.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and one reverse sweep visits each node once.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    rng: StdRng,
}

impl<T: Scalar> Graph<T> {
    /// `training` enables dropout; `seed` drives the dropout masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Graph { nodes: Vec::new(), training, rng: StdRng::seed_from_u64(seed) }
    }

    /// Graph in evaluation mode (dropout is the identity).
    pub fn eval() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input that never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A trainable parameter leaf. The value is copied onto the tape.
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        self.push(value.clone(), Op::Param(id), true)
    }

    /// A virtual gate leaf: its gradient is reported but never applied.
    pub fn gate(&mut self, id: GateId, value: Tensor<T>) -> Var {
        self.push(value, Op::Gate(id), true)
    }

    /// `a @ b` for `a: [.., k]` and `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` for `a: [.., k]` and `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 {
            return Err(Error::Shape { op: "matmul", lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let (k, n) = if trans_b { (bv.shape()[1], bv.shape()[0]) } else { (bv.shape()[0], bv.shape()[1]) };
        if av.cols() != k {
            return Err(Error::Shape { op: "matmul", lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let m = av.rows();
        let mut out = vec![T::zero(); m * n];
        let bview = if trans_b { View::dense(bv.data(), 0, n, k).t() } else { View::dense(bv.data(), 0, k, n) };
        gemm(T::one(), View::dense(av.data(), 0, m, k), bview, T::zero(), ViewMut::dense(&mut out, 0, m, n));
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out)?;
        self.push_checked("matmul", value, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    /// Elementwise sum. `b` may also be a vector matching the last axis of
    /// `a`, in which case it is added to every row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.shape().len() == 1 && bv.len() == av.cols() {
            true
        } else {
            return Err(Error::Shape { op: "add", lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        };
        let mut out = av.data().to_vec();
        if broadcast {
            let c = av.cols();
            for row in out.chunks_mut(c) {
                row.iter_mut().zip(bv.data()).for_each(|(x, &y)| *x += y);
            }
        } else {
            out.iter_mut().zip(bv.data()).for_each(|(x, &y)| *x += y);
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push_checked("add", value, Op::Add { a, b, broadcast }, &[a, b])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape { op: "mul", lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() });
        }
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push_checked("mul", value, Op::Mul { a, b }, &[a, b])
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        self.push_checked("scale", value, Op::Scale { x, factor }, &[x])
    }

    /// `gate ⊙ x` along the last axis.
    ///
    /// `gate` is either `[w]`, shared by every row of `x`, or `[g, w]`, where
    /// consecutive blocks of `rows(x) / g` rows share one gate row. The second
    /// form gives each sample its own gate so per-sample gradients can be read.
    pub fn gate_apply(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gate));
        let w = gv.cols();
        let groups = gv.rows();
        if xv.cols() != w || gv.shape().len() > 2 || xv.rows() % groups != 0 {
            return Err(Error::Shape { op: "gate_apply", lhs: xv.shape().to_vec(), rhs: gv.shape().to_vec() });
        }
        let rows_per_group = xv.rows() / groups;
        let mut out = xv.data().to_vec();
        for (r, row) in out.chunks_mut(w).enumerate() {
            let g = &gv.data()[(r / rows_per_group) * w..][..w];
            row.iter_mut().zip(g).for_each(|(o, &gi)| *o *= gi);
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push_checked("gate_apply", value, Op::GateMul { x, gate, rows_per_group }, &[x, gate])
    }

    /// Row lookup in `table: [V, d]`. Each output row is the mean of the rows
    /// listed in its bag; single-element bags give a plain lookup.
    pub fn embedding(&mut self, table: Var, bags: Bags) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(Error::Shape { op: "embedding", lhs: tv.shape().to_vec(), rhs: vec![bags.len()] });
        }
        if bags.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = vec![T::zero(); bags.len() * d];
        for (i, o) in out.chunks_mut(d).enumerate() {
            let bag = bags.bag(i);
            if bag.is_empty() {
                return Err(Error::Empty("embedding bag"));
            }
            for &idx in bag {
                if idx >= rows {
                    return Err(Error::IndexOutOfRange { op: "embedding", index: idx, rows });
                }
                o.iter_mut().zip(&tv.data()[idx * d..(idx + 1) * d]).for_each(|(a, &b)| *a += b);
            }
            if bag.len() > 1 {
                let inv = T::one() / T::from_usize(bag.len()).unwrap();
                o.iter_mut().for_each(|a| *a *= inv);
            }
        }
        let value = Tensor::matrix(bags.len(), d, out)?;
        self.push_checked("embedding", value, Op::Embedding { table, bags }, &[table])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = xv.data().to_vec();
        out.chunks_mut(c).for_each(softmax_in_place);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push_checked("softmax", value, Op::Softmax { x }, &[x])
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    ///
    /// A row whose entries are all equal normalizes to exactly zero.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.cols();
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::Shape { op: "layer_norm", lhs: xv.shape().to_vec(), rhs: gv.shape().to_vec() });
        }
        let rows = xv.rows();
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let constant = row.iter().all(|&v| v == row[0]);
            let xh = &mut xhat[r * d..(r + 1) * d];
            let o = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                xh[j] = if constant { T::zero() } else { (row[j] - mean) * rs };
                o[j] = xh[j] * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push_checked("layer_norm", value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Inverted dropout with drop probability `p`; the identity in eval mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n).map(|_| if self.rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let xv = self.value(x);
        let out = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push_checked("dropout", value, Op::Dropout { x, mask }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push_checked("sigmoid", value, Op::Sigmoid { x }, &[x])
    }

    /// Multi-head scaled dot-product attention with a strictly causal mask.
    ///
    /// `q`, `k`, `v` are `[batch * seq, d]` with the `seq` rows of each sample
    /// contiguous; head `h` owns columns `h*d/heads .. (h+1)*d/heads`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.shape().len() != 2 {
            return Err(Error::Shape { op: "attention", lhs: qv.shape().to_vec(), rhs: kv.shape().to_vec() });
        }
        let d = qv.cols();
        if heads == 0 || d % heads != 0 || qv.rows() != batch * seq {
            return Err(Error::Shape { op: "attention", lhs: qv.shape().to_vec(), rhs: vec![batch, seq, heads] });
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); batch * seq * d];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * d + h * dh;
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                gemm(
                    scale,
                    View::strided(qv.data(), base, seq, dh, d, 1),
                    View::strided(kv.data(), base, seq, dh, d, 1).t(),
                    T::zero(),
                    ViewMut::dense(p, 0, seq, seq),
                );
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                gemm(
                    T::one(),
                    View::dense(p, 0, seq, seq),
                    View::strided(vv.data(), base, seq, dh, d, 1),
                    T::zero(),
                    ViewMut::strided(&mut out, base, seq, dh, d, 1),
                );
            }
        }
        let value = Tensor::matrix(batch * seq, d, out)?;
        self.push_checked("attention", value, Op::Attention { q, k, v, batch, seq, heads, probs }, &[q, k, v])
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape { op: "concat", lhs: self.shape(first).to_vec(), rhs: s.to_vec() });
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let c = t.cols();
                out.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        self.push_checked("concat", value, Op::Concat { parts: parts.to_vec() }, parts)
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape { op: "mean", lhs: shape, rhs: vec![axis] });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let inv = T::one() / T::from_usize(len).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..][..inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
            }
        }
        out.iter_mut().for_each(|a| *a *= inv);
        let mut out_shape: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &s)| s).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        self.push_checked("mean", value, Op::Mean { x, axis }, &[x])
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Masked mean binary cross-entropy:
    /// `-(1/Σm) Σ m (t ln p + (1-t) ln(1-p))` with `p` clamped to
    /// `[1e-7, 1-1e-7]`.
    pub fn bce_loss(&mut self, probs: Var, targets: &[T], mask: &[T]) -> Result<Var> {
        let denom = mask.iter().copied().sum::<T>();
        if denom <= T::zero() {
            return Err(Error::AllMasked);
        }
        self.bce_impl(probs, targets, mask, denom)
    }

    /// Weighted binary cross-entropy sum `-Σ w (t ln p + (1-t) ln(1-p))`.
    pub fn bce_weighted_sum(&mut self, probs: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        if weights.iter().all(|w| *w == T::zero()) {
            return Err(Error::AllMasked);
        }
        self.bce_impl(probs, targets, weights, T::one())
    }

    fn bce_impl(&mut self, probs: Var, targets: &[T], weights: &[T], denom: T) -> Result<Var> {
        let pv = self.value(probs);
        if pv.len() != targets.len() || pv.len() != weights.len() {
            return Err(Error::LengthMismatch { op: "bce", left: pv.len(), right: targets.len().min(weights.len()) });
        }
        let (lo, hi) = (T::lit(BCE_CLAMP), T::one() - T::lit(BCE_CLAMP));
        let mut total = T::zero();
        for ((&p, &t), &w) in pv.data().iter().zip(targets).zip(weights) {
            if w == T::zero() {
                continue;
            }
            let p = p.max(lo).min(hi);
            total += w * (t * p.ln() + (T::one() - t) * (T::one() - p).ln());
        }
        let value = Tensor::scalar(-total / denom);
        let op = Op::Bce { probs, targets: targets.to_vec(), weights: weights.to_vec(), denom };
        self.push_checked("bce", value, op, &[probs])
    }

    /// Reverse pass from a scalar `loss`, adding parameter and gate gradients
    /// into `grads`. Calling it again without clearing `grads` accumulates.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<T>) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut g: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &dy, &mut g, grads);
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node<T>, dy: &[T], g: &mut [Option<Vec<T>>], grads: &mut Gradients<T>) {
        match &node.op {
            Op::Input => {}
            Op::Param(id) => grads.accumulate_param(*id, node.value.shape(), dy),
            Op::Gate(id) => grads.accumulate_gate(*id, node.value.shape(), dy),
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = node.value.cols();
                let dyv = View::dense(dy, 0, m, n);
                // b as a k x n view
                let bview = if *trans_b { View::dense(bv.data(), 0, n, k).t() } else { View::dense(bv.data(), 0, k, n) };
                if let Some(da) = self.grad_buf(g, *a) {
                    gemm(T::one(), dyv, bview.t(), T::one(), ViewMut::dense(da, 0, m, k));
                }
                if let Some(db) = self.grad_buf(g, *b) {
                    let aview = View::dense(av.data(), 0, m, k);
                    if *trans_b {
                        // d(b^T) = a^T dy, so db = dy^T a
                        gemm(T::one(), dyv.t(), aview, T::one(), ViewMut::dense(db, 0, n, k));
                    } else {
                        gemm(T::one(), aview.t(), dyv, T::one(), ViewMut::dense(db, 0, k, n));
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if let Some(da) = self.grad_buf(g, *a) {
                    da.iter_mut().zip(dy).for_each(|(x, &y)| *x += y);
                }
                if let Some(db) = self.grad_buf(g, *b) {
                    if *broadcast {
                        let c = db.len();
                        for row in dy.chunks(c) {
                            db.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                        }
                    } else {
                        db.iter_mut().zip(dy).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Mul { a, b } => {
                let da: Vec<T> = dy.iter().zip(self.value(*b).data()).map(|(&d, &y)| d * y).collect();
                let db: Vec<T> = dy.iter().zip(self.value(*a).data()).map(|(&d, &x)| d * x).collect();
                self.add_grad(g, *a, &da);
                self.add_grad(g, *b, &db);
            }
            Op::Scale { x, factor } => {
                if let Some(dx) = self.grad_buf(g, *x) {
                    dx.iter_mut().zip(dy).for_each(|(a, &d)| *a += d * *factor);
                }
            }
            Op::GateMul { x, gate, rows_per_group } => {
                let (xv, gv) = (self.value(*x), self.value(*gate));
                let w = gv.cols();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dg = vec![T::zero(); gv.len()];
                for (r, (dyr, xr)) in dy.chunks(w).zip(xv.data().chunks(w)).enumerate() {
                    let grow = (r / rows_per_group) * w;
                    for j in 0..w {
                        dx[r * w + j] = dyr[j] * gv.data()[grow + j];
                        dg[grow + j] += dyr[j] * xr[j];
                    }
                }
                self.add_grad(g, *x, &dx);
                self.add_grad(g, *gate, &dg);
            }
            Op::Embedding { table, bags } => {
                if let Some(dt) = self.grad_buf(g, *table) {
                    let d = node.value.cols();
                    for (i, dyr) in dy.chunks(d).enumerate() {
                        let bag = bags.bag(i);
                        let inv = T::one() / T::from_usize(bag.len()).unwrap();
                        for &idx in bag {
                            dt[idx * d..(idx + 1) * d].iter_mut().zip(dyr).for_each(|(a, &b)| *a += b * inv);
                        }
                    }
                }
            }
            Op::Softmax { x } => {
                if let Some(dx) = self.grad_buf(g, *x) {
                    let c = node.value.cols();
                    for ((dxr, yr), dyr) in dx.chunks_mut(c).zip(node.value.data().chunks(c)).zip(dy.chunks(c)) {
                        let dot = yr.iter().zip(dyr).map(|(&y, &d)| y * d).sum::<T>();
                        for j in 0..c {
                            dxr[j] += yr[j] * (dyr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = node.value.cols();
                let gv = self.value(*gamma).data().to_vec();
                let inv_d = T::one() / T::from_usize(d).unwrap();
                if let Some(dgam) = self.grad_buf(g, *gamma) {
                    for (dyr, xh) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dgam[j] += dyr[j] * xh[j];
                        }
                    }
                }
                if let Some(dbeta) = self.grad_buf(g, *beta) {
                    for dyr in dy.chunks(d) {
                        dbeta.iter_mut().zip(dyr).for_each(|(a, &b)| *a += b);
                    }
                }
                if let Some(dx) = self.grad_buf(g, *x) {
                    let mut dxh = vec![T::zero(); d];
                    for (r, (dyr, xh)) in dy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dxh[j] = dyr[j] * gv[j];
                        }
                        let mean_d = dxh.iter().copied().sum::<T>() * inv_d;
                        let mean_dx = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        let out = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += rstd[r] * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.grad_buf(g, *x) {
                    dx.iter_mut().zip(dy).zip(mask).for_each(|((a, &d), &m)| *a += d * m);
                }
            }
            Op::Sigmoid { x } => {
                if let Some(dx) = self.grad_buf(g, *x) {
                    dx.iter_mut()
                        .zip(dy)
                        .zip(node.value.data())
                        .for_each(|((a, &d), &y)| *a += d * y * (T::one() - y));
                }
            }
            Op::Attention { q, k, v, batch, seq, heads, probs } => {
                self.attention_backward(dy, (*q, *k, *v), (*batch, *seq, *heads), probs, g);
            }
            Op::Concat { parts } => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut dp = vec![T::zero(); rows * c];
                    for r in 0..rows {
                        dp[r * c..(r + 1) * c].copy_from_slice(&dy[r * total + start..r * total + start + c]);
                    }
                    self.add_grad(g, p, &dp);
                    start += c;
                }
            }
            Op::Mean { x, axis } => {
                if let Some(dx) = self.grad_buf(g, *x) {
                    let shape = self.shape(*x);
                    let (outer, len, inner) = split_axis(shape, *axis);
                    let inv = T::one() / T::from_usize(len).unwrap();
                    for o in 0..outer {
                        let src = &dy[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            dx[(o * len + l) * inner..][..inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, &b)| *a += b * inv);
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = self.grad_buf(g, *x) {
                    dx.iter_mut().for_each(|a| *a += dy[0]);
                }
            }
            Op::Bce { probs, targets, weights, denom } => {
                let pv = self.value(*probs).data().to_vec();
                if let Some(dp) = self.grad_buf(g, *probs) {
                    let (lo, hi) = (T::lit(BCE_CLAMP), T::one() - T::lit(BCE_CLAMP));
                    let scale = dy[0] / *denom;
                    for i in 0..pv.len() {
                        let (p, t, w) = (pv[i], targets[i], weights[i]);
                        if w == T::zero() || p < lo || p > hi {
                            continue;
                        }
                        dp[i] += -scale * w * (t / p - (T::one() - t) / (T::one() - p));
                    }
                }
            }
        }
    }

    fn attention_backward(
        &self,
        dy: &[T],
        (q, k, v): (Var, Var, Var),
        (batch, seq, heads): (usize, usize, usize),
        probs: &[T],
        g: &mut [Option<Vec<T>>],
    ) {
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let d = self.value(q).cols();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let n = batch * seq * d;
        let mut dq = vec![T::zero(); n];
        let mut dk = vec![T::zero(); n];
        let mut dv = vec![T::zero(); n];
        let mut dp = vec![T::zero(); seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * d + h * dh;
                let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                let dout = View::strided(dy, base, seq, dh, d, 1);
                // dV = P^T dO
                gemm(
                    T::one(),
                    View::dense(p, 0, seq, seq).t(),
                    dout,
                    T::zero(),
                    ViewMut::strided(&mut dv, base, seq, dh, d, 1),
                );
                // dP = dO V^T
                gemm(
                    T::one(),
                    dout,
                    View::strided(vv, base, seq, dh, d, 1).t(),
                    T::zero(),
                    ViewMut::dense(&mut dp, 0, seq, seq),
                );
                for i in 0..seq {
                    let pr = &p[i * seq..(i + 1) * seq];
                    let dr = &mut dp[i * seq..(i + 1) * seq];
                    let dot = pr[..=i].iter().zip(&dr[..=i]).map(|(&a, &b)| a * b).sum::<T>();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - dot);
                    }
                    dr[i + 1..].iter_mut().for_each(|x| *x = T::zero());
                }
                // dQ = scale dS K, dK = scale dS^T Q
                gemm(
                    scale,
                    View::dense(&dp, 0, seq, seq),
                    View::strided(kv, base, seq, dh, d, 1),
                    T::zero(),
                    ViewMut::strided(&mut dq, base, seq, dh, d, 1),
                );
                gemm(
                    scale,
                    View::dense(&dp, 0, seq, seq).t(),
                    View::strided(qv, base, seq, dh, d, 1),
                    T::zero(),
                    ViewMut::strided(&mut dk, base, seq, dh, d, 1),
                );
            }
        }
        self.add_grad(g, q, &dq);
        self.add_grad(g, k, &dk);
        self.add_grad(g, v, &dv);
    }

    /// Gradient buffer of `v`, zero-initialized on first use; `None` when `v`
    /// does not need a gradient.
    fn grad_buf<'g>(&self, g: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(g[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn add_grad(&self, g: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
        if let Some(buf) = self.grad_buf(g, v) {
            buf.iter_mut().zip(delta).for_each(|(a, &b)| *a += b);
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
