//! Valid (unpadded, stride 1) 2-D cross-correlation, computed as im2col + GEMM.

use rand::Rng;

use crate::gemm::{gemm, Layout};
use crate::pool::dims4;
use crate::{init, NnError, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

/// Activations recorded by [`Conv2d::forward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    input_shape: [usize; 4],
    /// Per-sample unfolded patches, each `[C·k·k, OH·OW]`.
    columns: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: init::fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        match weight.shape() {
            [o, _, k1, k2] if k1 == k2 && bias.shape() == [*o] => Ok(Self { weight, bias }),
            _ => Err(NnError::shape(
                "weight [O, C, k, k] and bias [O]",
                (weight.shape().to_vec(), bias.shape().to_vec()),
            )),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Output `[C_out, H - k + 1, W - k + 1]` for an input `[C_in, H, W]`.
    pub fn output_shape(&self, channels: usize, height: usize, width: usize) -> Result<[usize; 3]> {
        let k = self.kernel();
        if channels != self.in_channels() || height < k || width < k {
            return Err(NnError::shape(
                format!("[{}, >={k}, >={k}]", self.in_channels()),
                [channels, height, width],
            ));
        }
        Ok([self.out_channels(), height - k + 1, width - k + 1])
    }

    /// `[N, C_in, H, W] -> [N, C_out, H-k+1, W-k+1]`
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        let (n, c, h, w) = dims4(input)?;
        let [o, oh, ow] = self.output_shape(c, h, w)?;
        let k = self.kernel();
        let rows = c * k * k;
        let patches = oh * ow;
        let mut columns = vec![0.0; n * rows * patches];
        let mut out = vec![0.0; n * o * patches];
        let x = input.data();
        for s in 0..n {
            let cols = &mut columns[s * rows * patches..(s + 1) * rows * patches];
            im2col(&x[s * c * h * w..(s + 1) * c * h * w], c, h, w, k, cols);
            let y = &mut out[s * o * patches..(s + 1) * o * patches];
            for (ch, plane) in y.chunks_mut(patches).enumerate() {
                plane.fill(self.bias.data()[ch]);
            }
            gemm(
                o,
                rows,
                patches,
                self.weight.data(),
                Layout::Normal,
                cols,
                Layout::Normal,
                1.0,
                y,
            );
        }
        let cache = ConvCache {
            input_shape: [n, c, h, w],
            columns,
        };
        Ok((Tensor::new(vec![n, o, oh, ow], out)?, cache))
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<ConvGrads> {
        let [n, c, h, w] = cache.input_shape;
        let [o, oh, ow] = self.output_shape(c, h, w)?;
        if grad_out.shape() != [n, o, oh, ow] {
            return Err(NnError::shape([n, o, oh, ow], grad_out.shape()));
        }
        let k = self.kernel();
        let rows = c * k * k;
        let patches = oh * ow;
        let g = grad_out.data();
        let mut dw = vec![0.0; o * rows];
        let mut db = vec![0.0; o];
        let mut dx = if need_input_grad {
            vec![0.0; n * c * h * w]
        } else {
            Vec::new()
        };
        let mut dcols = vec![0.0; if need_input_grad { rows * patches } else { 0 }];
        for s in 0..n {
            let gs = &g[s * o * patches..(s + 1) * o * patches];
            let cols = &cache.columns[s * rows * patches..(s + 1) * rows * patches];
            gemm(o, patches, rows, gs, Layout::Normal, cols, Layout::Transposed, 1.0, &mut dw);
            for (b, plane) in db.iter_mut().zip(gs.chunks(patches)) {
                *b += plane.iter().sum::<f64>();
            }
            if need_input_grad {
                gemm(
                    rows,
                    o,
                    patches,
                    self.weight.data(),
                    Layout::Transposed,
                    gs,
                    Layout::Normal,
                    0.0,
                    &mut dcols,
                );
                col2im_add(&dcols, c, h, w, k, &mut dx[s * c * h * w..(s + 1) * c * h * w]);
            }
        }
        Ok(ConvGrads {
            weight: Tensor::new(self.weight.shape().to_vec(), dw)?,
            bias: Tensor::new(vec![o], db)?,
            input: if need_input_grad {
                Some(Tensor::new(vec![n, c, h, w], dx)?)
            } else {
                None
            },
        })
    }
}

/// Single-sample convolution `[C_in, H, W] -> [C_out, H-k+1, W-k+1]`.
pub fn conv2d_forward(layer: &Conv2d, input: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = input.shape() else {
        return Err(NnError::shape("[C, H, W]", input.shape()));
    };
    let batched = Tensor::new(vec![1, c, h, w], input.data().to_vec())?;
    let (out, _) = layer.forward(&batched)?;
    let shape = out.shape()[1..].to_vec();
    Tensor::new(shape, out.into_data())
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let patches = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * patches..(row + 1) * patches];
                for oy in 0..oh {
                    let src = &x[ch * h * w + (oy + ki) * w + kj..][..ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let patches = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * patches..(row + 1) * patches];
                for oy in 0..oh {
                    let dst = &mut dx[ch * h * w + (oy + ki) * w + kj..][..ow];
                    for (d, s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_copies_channel() {
        let layer = Conv2d::from_parts(
            Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let y = conv2d_forward(&layer, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn kernel_larger_than_input_is_an_error() {
        let layer = Conv2d::from_parts(Tensor::zeros(&[1, 1, 5, 5]), Tensor::zeros(&[1])).unwrap();
        assert!(conv2d_forward(&layer, &Tensor::zeros(&[1, 4, 4])).is_err());
        assert!(conv2d_forward(&layer, &Tensor::zeros(&[2, 6, 6])).is_err());
    }
}
