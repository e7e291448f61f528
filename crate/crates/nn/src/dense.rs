//! Fully connected (affine) layer.

use rand::Rng;

use crate::gemm::{gemm, Layout};
use crate::{init, NnError, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: init::fan_in_uniform(&[outputs, inputs], inputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(NnError::shape(
                "weight [out, in] and bias [out]",
                (weight.shape().to_vec(), bias.shape().to_vec()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `[N, in] -> [N, out]`
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (n, width) = matrix_dims(input)?;
        if width != self.inputs() {
            return Err(NnError::shape([n, self.inputs()], input.shape()));
        }
        let out = self.outputs();
        let mut y = vec![0.0; n * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            n,
            width,
            out,
            input.data(),
            Layout::Normal,
            self.weight.data(),
            Layout::Transposed,
            1.0,
            &mut y,
        );
        Tensor::new(vec![n, out], y)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let (n, width) = matrix_dims(input)?;
        let out = self.outputs();
        if grad_out.shape() != [n, out] {
            return Err(NnError::shape([n, out], grad_out.shape()));
        }
        let mut dw = vec![0.0; out * width];
        gemm(
            out,
            n,
            width,
            grad_out.data(),
            Layout::Transposed,
            input.data(),
            Layout::Normal,
            0.0,
            &mut dw,
        );
        let mut db = vec![0.0; out];
        for row in grad_out.data().chunks(out) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = vec![0.0; n * width];
        gemm(
            n,
            out,
            width,
            grad_out.data(),
            Layout::Normal,
            self.weight.data(),
            Layout::Normal,
            0.0,
            &mut dx,
        );
        Ok(DenseGrads {
            weight: Tensor::new(vec![out, width], dw)?,
            bias: Tensor::new(vec![out], db)?,
            input: Tensor::new(vec![n, width], dx)?,
        })
    }
}

/// Single-vector affine map `weight · input + bias`.
pub fn dense_forward(weight: &Tensor, bias: &Tensor, input: &[f64]) -> Result<Vec<f64>> {
    let layer = Dense::from_parts(weight.clone(), bias.clone())?;
    let x = Tensor::new(vec![1, input.len()], input.to_vec())?;
    Ok(layer.forward(&x)?.into_data())
}

fn matrix_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, w] => Ok((*n, *w)),
        other => Err(NnError::shape("[N, features]", other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = dense_forward(&w, &Tensor::zeros(&[3]), &[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            dense_forward(&w, &Tensor::zeros(&[2]), &[1.0, 2.0]),
            Err(NnError::ShapeMismatch { .. })
        ));
    }
}
