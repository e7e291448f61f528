//! Gated LSTM layer over time-major batches.
//!
//! Gate pre-activations are packed `[i, f, g, o]` along the `4·H` axis:
//! `i, f, o` use the logistic sigmoid, `g` uses tanh, and
//! `c_t = f ⊙ c_{t-1} + i ⊙ g`, `h_t = o ⊙ tanh(c_t)`.
//!
//! Sequences are laid out time-major: element `(t, n, j)` of a `T × N × D`
//! buffer lives at `(t·N + n)·D + j`.

use rand::Rng;

use crate::activation::sigmoid;
use crate::gemm::{gemm, Layout};
use crate::{init, NnError, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `[4H, I]`
    pub w_input: Tensor,
    /// `[4H, H]`
    pub w_recurrent: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

/// Hidden and cell state for a batch, each `N × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: vec![0.0; batch * hidden],
            c: vec![0.0; batch * hidden],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: usize,
    batch: usize,
    inputs: Vec<f64>,
    /// `h_{t-1}` for every step, `T × N × H`.
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `T × N × 4H`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w_input: Tensor,
    pub w_recurrent: Tensor,
    pub bias: Tensor,
    /// `T × N × I`
    pub inputs: Vec<f64>,
    /// Gradient reaching the initial state.
    pub initial: LstmState,
}

impl Lstm {
    /// Uniform `±1/sqrt(H)` weights, zero biases except the forget gate at 1.
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            w_input: init::uniform(&[4 * hidden, inputs], bound, rng),
            w_recurrent: init::uniform(&[4 * hidden, hidden], bound, rng),
            bias,
        }
    }

    pub fn from_parts(w_input: Tensor, w_recurrent: Tensor, bias: Tensor) -> Result<Self> {
        let ok = match (w_input.shape(), w_recurrent.shape(), bias.shape()) {
            ([g, _], [g2, h], [g3]) => g == g2 && g == g3 && *g == 4 * h,
            _ => false,
        };
        if !ok {
            return Err(NnError::shape(
                "[4H, I], [4H, H], [4H]",
                (
                    w_input.shape().to_vec(),
                    w_recurrent.shape().to_vec(),
                    bias.shape().to_vec(),
                ),
            ));
        }
        Ok(Self {
            w_input,
            w_recurrent,
            bias,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.shape()[1]
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }

    /// Runs `steps` time steps for a batch. Returns every hidden output
    /// (`T × N × H`), the final state and the cache for [`Lstm::backward`].
    pub fn forward(
        &self,
        inputs: &[f64],
        steps: usize,
        batch: usize,
        initial: &LstmState,
    ) -> Result<(Vec<f64>, LstmState, LstmCache)> {
        let (hd, id) = (self.hidden(), self.inputs());
        let g4 = 4 * hd;
        if inputs.len() != steps * batch * id {
            return Err(NnError::shape(steps * batch * id, inputs.len()));
        }
        if initial.h.len() != batch * hd || initial.c.len() != batch * hd {
            return Err(NnError::shape(
                batch * hd,
                (initial.h.len(), initial.c.len()),
            ));
        }
        // Input contributions for all steps in one product.
        let mut gates = vec![0.0; steps * batch * g4];
        for row in gates.chunks_mut(g4) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            steps * batch,
            id,
            g4,
            inputs,
            Layout::Normal,
            self.w_input.data(),
            Layout::Transposed,
            1.0,
            &mut gates,
        );
        let sz = steps * batch * hd;
        let mut h_prev = vec![0.0; sz];
        let mut c_prev = vec![0.0; sz];
        let mut tanh_c = vec![0.0; sz];
        let mut outputs = vec![0.0; sz];
        let mut h = initial.h.clone();
        let mut c = initial.c.clone();
        for t in 0..steps {
            let span = t * batch * hd..(t + 1) * batch * hd;
            h_prev[span.clone()].copy_from_slice(&h);
            c_prev[span.clone()].copy_from_slice(&c);
            let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            gemm(
                batch,
                hd,
                g4,
                &h,
                Layout::Normal,
                self.w_recurrent.data(),
                Layout::Transposed,
                1.0,
                z,
            );
            for n in 0..batch {
                let zr = &mut z[n * g4..(n + 1) * g4];
                for j in 0..hd {
                    let i_g = sigmoid(zr[j]);
                    let f_g = sigmoid(zr[hd + j]);
                    let g_g = zr[2 * hd + j].tanh();
                    let o_g = sigmoid(zr[3 * hd + j]);
                    zr[j] = i_g;
                    zr[hd + j] = f_g;
                    zr[2 * hd + j] = g_g;
                    zr[3 * hd + j] = o_g;
                    let idx = n * hd + j;
                    let cn = f_g * c[idx] + i_g * g_g;
                    let tc = cn.tanh();
                    c[idx] = cn;
                    h[idx] = o_g * tc;
                    tanh_c[t * batch * hd + idx] = tc;
                }
            }
            outputs[span].copy_from_slice(&h);
        }
        let cache = LstmCache {
            steps,
            batch,
            inputs: inputs.to_vec(),
            h_prev,
            c_prev,
            gates,
            tanh_c,
        };
        Ok((outputs, LstmState { h, c }, cache))
    }

    /// Backpropagation through the recorded steps.
    ///
    /// `grad_outputs` (`T × N × H`) is the loss gradient w.r.t. every emitted
    /// hidden output; `grad_final` optionally adds gradients w.r.t. the final
    /// `(h, c)`. Gradients do not flow past the initial state except into
    /// [`LstmGrads::initial`].
    pub fn backward(
        &self,
        cache: &LstmCache,
        grad_outputs: &[f64],
        grad_final: Option<&LstmState>,
    ) -> Result<LstmGrads> {
        let (hd, id) = (self.hidden(), self.inputs());
        let g4 = 4 * hd;
        let (steps, batch) = (cache.steps, cache.batch);
        if grad_outputs.len() != steps * batch * hd {
            return Err(NnError::shape(steps * batch * hd, grad_outputs.len()));
        }
        let mut dh_next = vec![0.0; batch * hd];
        let mut dc_next = vec![0.0; batch * hd];
        if let Some(fin) = grad_final {
            if fin.h.len() != batch * hd || fin.c.len() != batch * hd {
                return Err(NnError::shape(batch * hd, (fin.h.len(), fin.c.len())));
            }
            dh_next.copy_from_slice(&fin.h);
            dc_next.copy_from_slice(&fin.c);
        }
        let mut dz = vec![0.0; steps * batch * g4];
        for t in (0..steps).rev() {
            let base = t * batch * hd;
            let zs = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
            let dzs = &mut dz[t * batch * g4..(t + 1) * batch * g4];
            for n in 0..batch {
                let zr = &zs[n * g4..(n + 1) * g4];
                let dr = &mut dzs[n * g4..(n + 1) * g4];
                for j in 0..hd {
                    let idx = n * hd + j;
                    let (i_g, f_g, g_g, o_g) = (zr[j], zr[hd + j], zr[2 * hd + j], zr[3 * hd + j]);
                    let tc = cache.tanh_c[base + idx];
                    let dh = grad_outputs[base + idx] + dh_next[idx];
                    let d_o = dh * tc;
                    let dc = dc_next[idx] + dh * o_g * (1.0 - tc * tc);
                    let d_i = dc * g_g;
                    let d_g = dc * i_g;
                    let d_f = dc * cache.c_prev[base + idx];
                    dc_next[idx] = dc * f_g;
                    dr[j] = d_i * i_g * (1.0 - i_g);
                    dr[hd + j] = d_f * f_g * (1.0 - f_g);
                    dr[2 * hd + j] = d_g * (1.0 - g_g * g_g);
                    dr[3 * hd + j] = d_o * o_g * (1.0 - o_g);
                }
            }
            gemm(
                batch,
                g4,
                hd,
                dzs,
                Layout::Normal,
                self.w_recurrent.data(),
                Layout::Normal,
                0.0,
                &mut dh_next,
            );
        }
        let rows = steps * batch;
        let mut dwx = vec![0.0; g4 * id];
        gemm(g4, rows, id, &dz, Layout::Transposed, &cache.inputs, Layout::Normal, 0.0, &mut dwx);
        let mut dwh = vec![0.0; g4 * hd];
        gemm(g4, rows, hd, &dz, Layout::Transposed, &cache.h_prev, Layout::Normal, 0.0, &mut dwh);
        let mut db = vec![0.0; g4];
        for row in dz.chunks(g4) {
            for (b, v) in db.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut dx = vec![0.0; rows * id];
        gemm(rows, g4, id, &dz, Layout::Normal, self.w_input.data(), Layout::Normal, 0.0, &mut dx);
        Ok(LstmGrads {
            w_input: Tensor::new(vec![g4, id], dwx)?,
            w_recurrent: Tensor::new(vec![g4, hd], dwh)?,
            bias: Tensor::new(vec![g4], db)?,
            inputs: dx,
            initial: LstmState {
                h: dh_next,
                c: dc_next,
            },
        })
    }
}

/// Single-sequence forward: `sequence` is `T × I`; returns the `T × H`
/// outputs and the final state.
pub fn lstm_forward(
    layer: &Lstm,
    sequence: &[f64],
    initial: &LstmState,
) -> Result<(Vec<f64>, LstmState)> {
    let id = layer.inputs();
    if id == 0 || sequence.len() % id != 0 {
        return Err(NnError::shape(format!("multiple of {id}"), sequence.len()));
    }
    let (out, state, _) = layer.forward(sequence, sequence.len() / id, 1, initial)?;
    Ok((out, state))
}
