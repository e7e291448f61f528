//! Element-wise activations and softmax.

use crate::tensor::ensure_finite;
use crate::{NnError, Result, Tensor};

pub fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` by the positivity of the ReLU *output*.
pub fn relu_backward_in_place(output: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of a single logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(NnError::shape("at least one logit", 0));
    }
    ensure_finite(logits, "softmax logits")?;
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax over a `[N, classes]` tensor.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(NnError::shape("[N, classes]", shape));
    }
    logits.ensure_finite("softmax logits")?;
    let classes = shape[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        softmax_in_place(row);
    }
    Ok(out)
}
