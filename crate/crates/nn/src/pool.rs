//! 2×2 average pooling with stride 2.

use crate::{NnError, Result, Tensor};

/// `[N, C, H, W] -> [N, C, H/2, W/2]`
pub fn avgpool_forward(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4(input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::OddDimension { height: h, width: w });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..ow {
                dst[oy * ow + ox] =
                    0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Spreads each output gradient evenly over its 2×2 window.
pub fn avgpool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(NnError::shape("[N, C, H, W]", input_shape));
    };
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(NnError::shape([n, c, oh, ow], grad_out.shape()));
    }
    let g = grad_out.data();
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = 0.25 * src[(y / 2) * ow + x / 2];
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

pub(crate) fn dims4(t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(NnError::shape("[N, C, H, W]", other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::new(vec![1, 2, 4, 6], vec![3.25; 48]).unwrap();
        let y = avgpool_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn odd_dimension_rejected() {
        let x = Tensor::zeros(&[1, 1, 5, 4]);
        assert!(matches!(
            avgpool_forward(&x),
            Err(NnError::OddDimension { height: 5, width: 4 })
        ));
    }

    #[test]
    fn lenet_sized_shape() {
        let x = Tensor::zeros(&[1, 32, 24, 24]);
        assert_eq!(avgpool_forward(&x).unwrap().shape(), &[1, 32, 12, 12]);
    }
}
