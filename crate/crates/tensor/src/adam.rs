//! Adam update rule with bias correction.

use crate::store::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Self {
            first_moment: store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect(),
            second_moment: store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One Adam step over every parameter of the store.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for id in store.ids().collect::<Vec<_>>() {
            let grad = grads.get(id);
            let m = &mut self.first_moment[id.0];
            let v = &mut self.second_moment[id.0];
            let p = store.value_mut(id);
            for i in 0..grad.len() {
                let g = grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.data_mut()[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
