use std::collections::BTreeMap;

use crate::autograd::{Gradients, ParamId};
use crate::importance::FrozenRows;
use crate::model::ParamStore;
use crate::scalar::Scalar;

/// Adam with bias-corrected moments and a constant learning rate.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: BTreeMap<ParamId, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { learning_rate, beta1, beta2, eps, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> usize {
        self.step as usize
    }

    /// Applies one update to every parameter that has a gradient. Rows listed
    /// in `frozen` keep their values and their moment estimates.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, frozen: &FrozenRows) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, lr, eps) = (T::one(), T::lit(self.learning_rate), T::lit(self.eps));
        let c1 = one - b1.powi(self.step);
        let c2 = one - b2.powi(self.step);
        for (id, grad) in grads.params() {
            let p = params.get_mut(id);
            let n = p.len();
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let frozen_rows = frozen.get(id);
            let row_len = match frozen_rows {
                Some(rows) if !rows.is_empty() => n / rows.len(),
                _ => n.max(1),
            };
            for (i, (x, &g)) in p.data_mut().iter_mut().zip(grad.data()).enumerate() {
                if frozen_rows.is_some_and(|rows| rows[i / row_len]) {
                    continue;
                }
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
