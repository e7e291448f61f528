//! Adam optimizer with bias correction.

use crate::{NnError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &[&Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One Adam step over every parameter tensor.
pub fn adam_update(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(NnError::shape(
            params.len(),
            (grads.len(), state.first.len()),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || m.len() != p.len() {
            return Err(NnError::shape(p.shape(), g.shape()));
        }
    }
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (((w, &gj), mj), vj) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
