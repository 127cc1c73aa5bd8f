use super::graph::{GateId, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A virtual all-ones parameter multiplied into a layer output so that the
/// loss gradient with respect to each output unit can be read off.
///
/// The values are fixed at one; only `captured_grad` changes.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParam<T> {
    id: GateId,
    values: Vec<T>,
    captured_grad: Vec<T>,
}

impl<T: Scalar> GateParam<T> {
    pub fn ones(id: GateId, width: usize) -> Self {
        GateParam { id, values: vec![T::one(); width], captured_grad: vec![T::zero(); width] }
    }

    pub fn id(&self) -> GateId {
        self.id
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn captured_grad(&self) -> &[T] {
        &self.captured_grad
    }

    pub fn reset(&mut self) {
        self.captured_grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Records the gate on `graph`, one copy per group of rows, and returns
    /// `gate ⊙ layer_output`.
    pub fn apply(&self, graph: &mut Graph<T>, layer_output: Var, groups: usize) -> Result<Var> {
        let width = graph.value(layer_output).cols();
        if width != self.width() {
            return Err(Error::Shape {
                op: "gate_apply",
                lhs: graph.value(layer_output).shape().to_vec(),
                rhs: vec![self.width()],
            });
        }
        let mut data = Vec::with_capacity(groups * width);
        for _ in 0..groups {
            data.extend_from_slice(&self.values);
        }
        let gate = graph.gate(self.id, Tensor::matrix(groups, width, data)?);
        graph.gate_apply(layer_output, gate)
    }

    /// Adds `Σ_rows |grad|` to the captured gradient. `grad` is the gate
    /// gradient as reported by a reverse pass, `[groups, width]` or `[width]`.
    pub fn accumulate_abs(&mut self, grad: &Tensor<T>) -> Result<()> {
        if grad.cols() != self.width() {
            return Err(Error::Shape { op: "gate accumulate", lhs: grad.shape().to_vec(), rhs: vec![self.width()] });
        }
        for row in grad.data().chunks(self.width()) {
            self.captured_grad.iter_mut().zip(row).for_each(|(a, &g)| *a += g.abs());
        }
        Ok(())
    }
}
