use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState, hyper: &AdamHyper) {
    assert_eq!(param.len(), grad.len());
    if state.m.len() != param.len() {
        *state = AdamState::zeros(param.len());
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..param.len() {
        let g = grad[i].to_f64();
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let update = hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        param[i] = T::from_f64(param[i].to_f64() - update);
    }
}

/// Adam over every non-frozen tensor of a store.
#[derive(Debug, Clone)]
pub struct Adam {
    pub hyper: AdamHyper,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<T: Real>(params: &ParamStore<T>, hyper: AdamHyper) -> Self {
        Adam {
            hyper,
            states: params.iter().map(|(_, p)| AdamState::zeros(p.tensor.len())).collect(),
        }
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>) {
        for (p, state) in params.iter_mut().zip(&mut self.states) {
            if p.frozen {
                continue;
            }
            let Some(grad) = p.tensor.grad().map(<[T]>::to_vec) else {
                continue;
            };
            adam_step(p.tensor.data_mut(), &grad, state, &self.hyper);
            p.tensor.zero_grad();
        }
    }
}
