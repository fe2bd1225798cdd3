use serde::{Deserialize, Serialize};

use super::tape::Parameter;
use super::tensor::Tensor;

/// Moment estimates for Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(params: &[Parameter], hyper: AdamHyper) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            hyper,
        }
    }
}

/// One Adam update of every trainable parameter from its `grad`.
pub fn adam_step(state: &mut AdamState, params: &mut [Parameter], lr: f64) {
    state.step_count += 1;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let t = state.step_count as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (k, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.first_moment[k].values_mut();
        let v = state.second_moment[k].values_mut();
        let grad = p.grad.values();
        for (((w, g), m), v) in p.value.values_mut().iter_mut().zip(grad).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
