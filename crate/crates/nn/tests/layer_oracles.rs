//! Forward passes against naive loop implementations, and backward passes
//! against central finite differences.

use iotid_nn::activation::{sigmoid, softmax};
use iotid_nn::conv::{conv2d_forward, Conv2d};
use iotid_nn::dense::{dense_forward, Dense};
use iotid_nn::lstm::{lstm_forward, Lstm, LstmState};
use iotid_nn::pool::{avgpool_backward, avgpool_forward};
use iotid_nn::{init, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    init::uniform(shape, 1.0, rng)
}

fn naive_conv(w: &Tensor, b: &Tensor, x: &Tensor) -> Vec<f64> {
    let [o, c, k, _] = w.shape().try_into().unwrap();
    let [_, h, wd] = x.shape().try_into().unwrap();
    let (oh, ow) = (h - k + 1, wd - k + 1);
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for i in 0..k {
                        for j in 0..k {
                            acc += w.data()[((oc * c + ic) * k + i) * k + j]
                                * x.data()[(ic * h + y + i) * wd + xx + j];
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn conv_matches_quadruple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let c = rng.gen_range(1..4);
        let o = rng.gen_range(1..4);
        let k = rng.gen_range(1..4);
        let h = rng.gen_range(k..k + 6);
        let w = rng.gen_range(k..k + 6);
        let layer = Conv2d::from_parts(rand_tensor(&[o, c, k, k], &mut rng), rand_tensor(&[o], &mut rng)).unwrap();
        let x = rand_tensor(&[c, h, w], &mut rng);
        let y = conv2d_forward(&layer, &x).unwrap();
        assert_eq!(y.shape(), &[o, h - k + 1, w - k + 1]);
        assert!(max_abs_diff(y.data(), &naive_conv(&layer.weight, &layer.bias, &x)) < 1e-10);
    }
}

pub fn first_convolution_of_28_pixel_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Conv2d::new(1, 32, 5, &mut rng);
    let y = conv2d_forward(&layer, &Tensor::zeros(&[1, 28, 28])).unwrap();
    assert_eq!(y.shape(), &[32, 24, 24]);
}

pub fn pool_matches_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let c = rng.gen_range(1..4);
        let h = 2 * rng.gen_range(1..5);
        let w = 2 * rng.gen_range(1..5);
        let x = rand_tensor(&[1, c, h, w], &mut rng);
        let y = avgpool_forward(&x).unwrap();
        let mut want = Vec::new();
        for ch in 0..c {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    let at = |a: usize, b: usize| x.data()[(ch * h + a) * w + b];
                    want.push(
                        (at(2 * i, 2 * j) + at(2 * i + 1, 2 * j) + at(2 * i, 2 * j + 1) + at(2 * i + 1, 2 * j + 1)) / 4.0,
                    );
                }
            }
        }
        assert!(max_abs_diff(y.data(), &want) < 1e-10);
    }
}

pub fn dense_matches_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let i = rng.gen_range(1..20);
        let o = rng.gen_range(1..20);
        let w = rand_tensor(&[o, i], &mut rng);
        let b = rand_tensor(&[o], &mut rng);
        let x: Vec<f64> = (0..i).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = dense_forward(&w, &b, &x).unwrap();
        let want: Vec<f64> = (0..o)
            .map(|r| b.data()[r] + (0..i).map(|c| w.data()[r * i + c] * x[c]).sum::<f64>())
            .collect();
        assert!(max_abs_diff(&y, &want) < 1e-10);
    }
}

pub fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let n = rng.gen_range(1..30);
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = z.iter().map(|v| v.exp() / denom).collect();
        assert!(max_abs_diff(&softmax(&z).unwrap(), &want) < 1e-10);
    }
}

/// Scalar, step-by-step LSTM recurrence written independently of the layer.
fn scalar_lstm(layer: &Lstm, seq: &[f64], steps: usize, h0: &[f64], c0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = layer.hidden();
    let id = layer.inputs();
    let wx = layer.w_input.data();
    let wh = layer.w_recurrent.data();
    let b = layer.bias.data();
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    let mut outs = Vec::new();
    for t in 0..steps {
        let x = &seq[t * id..(t + 1) * id];
        let pre = |gate: usize, j: usize| {
            let row = gate * hd + j;
            let mut acc = b[row];
            for k in 0..id {
                acc += wx[row * id + k] * x[k];
            }
            for k in 0..hd {
                acc += wh[row * hd + k] * h[k];
            }
            acc
        };
        let mut nh = vec![0.0; hd];
        let mut nc = vec![0.0; hd];
        for j in 0..hd {
            let i_g = sigmoid(pre(0, j));
            let f_g = sigmoid(pre(1, j));
            let g_g = pre(2, j).tanh();
            let o_g = sigmoid(pre(3, j));
            nc[j] = f_g * c[j] + i_g * g_g;
            nh[j] = o_g * nc[j].tanh();
        }
        h = nh;
        c = nc;
        outs.extend_from_slice(&h);
    }
    (outs, c)
}

pub fn lstm_matches_scalar_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let id = rng.gen_range(1..5);
        let hd = rng.gen_range(1..5);
        let steps = rng.gen_range(1..6);
        let layer = Lstm::from_parts(
            rand_tensor(&[4 * hd, id], &mut rng),
            rand_tensor(&[4 * hd, hd], &mut rng),
            rand_tensor(&[4 * hd], &mut rng),
        )
        .unwrap();
        let seq: Vec<f64> = (0..steps * id).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let init = LstmState {
            h: (0..hd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            c: (0..hd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let (outs, state) = lstm_forward(&layer, &seq, &init).unwrap();
        let (want_outs, want_c) = scalar_lstm(&layer, &seq, steps, &init.h, &init.c);
        assert!(max_abs_diff(&outs, &want_outs) < 1e-10);
        assert!(max_abs_diff(&state.c, &want_c) < 1e-10);
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Loss used for the layer checks: a fixed random projection of the output.
fn projection(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_coords(
    params: &mut Vec<f64>,
    analytic: &[f64],
    loss: &dyn Fn(&[f64]) -> f64,
    rng: &mut ChaCha8Rng,
) {
    let h = 1e-5;
    for _ in 0..20 {
        let i = rng.gen_range(0..params.len());
        let orig = params[i];
        params[i] = orig + h;
        let lp = loss(params);
        params[i] = orig - h;
        let lm = loss(params);
        params[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        assert!(rel_err(fd, analytic[i]) < 1e-4, "coord {i}: fd {fd} analytic {}", analytic[i]);
    }
}

pub fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let layer = Conv2d::new(2, 3, 3, &mut rng);
    let x = rand_tensor(&[2, 2, 6, 6], &mut rng);
    let (y, cache) = layer.forward(&x).unwrap();
    let proj = projection(y.len(), 5);
    let gy = Tensor::new(y.shape().to_vec(), proj.clone()).unwrap();
    let grads = layer.backward(&cache, &gy, true).unwrap();

    let bias = layer.bias.clone();
    let xs = x.clone();
    let mut w = layer.weight.data().to_vec();
    let wshape = layer.weight.shape().to_vec();
    check_coords(
        &mut w,
        grads.weight.data(),
        &|p| {
            let l = Conv2d::from_parts(Tensor::new(wshape.clone(), p.to_vec()).unwrap(), bias.clone()).unwrap();
            dot(l.forward(&xs).unwrap().0.data(), &proj)
        },
        &mut rng,
    );
    let mut xv = x.data().to_vec();
    check_coords(
        &mut xv,
        grads.input.as_ref().unwrap().data(),
        &|p| dot(layer.forward(&Tensor::new(vec![2, 2, 6, 6], p.to_vec()).unwrap()).unwrap().0.data(), &proj),
        &mut rng,
    );
    let mut bv = layer.bias.data().to_vec();
    let weight = layer.weight.clone();
    check_coords(
        &mut bv,
        grads.bias.data(),
        &|p| {
            let l = Conv2d::from_parts(weight.clone(), Tensor::new(vec![3], p.to_vec()).unwrap()).unwrap();
            dot(l.forward(&xs).unwrap().0.data(), &proj)
        },
        &mut rng,
    );
}

pub fn pool_and_dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&[2, 2, 4, 6], &mut rng);
    let proj = projection(2 * 2 * 2 * 3, 6);
    let gy = Tensor::new(vec![2, 2, 2, 3], proj.clone()).unwrap();
    let gx = avgpool_backward(&gy, x.shape()).unwrap();
    let mut xv = x.data().to_vec();
    check_coords(
        &mut xv,
        gx.data(),
        &|p| dot(avgpool_forward(&Tensor::new(vec![2, 2, 4, 6], p.to_vec()).unwrap()).unwrap().data(), &proj),
        &mut rng,
    );

    let layer = Dense::new(7, 4, &mut rng);
    let x = rand_tensor(&[3, 7], &mut rng);
    let proj = projection(12, 7);
    let g = layer.backward(&x, &Tensor::new(vec![3, 4], proj.clone()).unwrap()).unwrap();
    let bias = layer.bias.clone();
    let mut wv = layer.weight.data().to_vec();
    check_coords(
        &mut wv,
        g.weight.data(),
        &|p| {
            let l = Dense::from_parts(Tensor::new(vec![4, 7], p.to_vec()).unwrap(), bias.clone()).unwrap();
            dot(l.forward(&x).unwrap().data(), &proj)
        },
        &mut rng,
    );
    let mut xv = x.data().to_vec();
    check_coords(
        &mut xv,
        g.input.data(),
        &|p| dot(layer.forward(&Tensor::new(vec![3, 7], p.to_vec()).unwrap()).unwrap().data(), &proj),
        &mut rng,
    );
}

pub fn lstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (id, hd, steps, batch) = (3, 4, 3, 2);
    let layer = Lstm::new(id, hd, &mut rng);
    let x: Vec<f64> = (0..steps * batch * id).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let init = LstmState {
        h: (0..batch * hd).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        c: (0..batch * hd).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    };
    let proj_out = projection(steps * batch * hd, 8);
    let proj_c = projection(batch * hd, 9);
    let loss = |l: &Lstm, x: &[f64], init: &LstmState| {
        let (out, st, _) = l.forward(x, steps, batch, init).unwrap();
        dot(&out, &proj_out) + dot(&st.c, &proj_c)
    };
    let (_, _, cache) = layer.forward(&x, steps, batch, &init).unwrap();
    let g = layer
        .backward(
            &cache,
            &proj_out,
            Some(&LstmState {
                h: vec![0.0; batch * hd],
                c: proj_c.clone(),
            }),
        )
        .unwrap();

    let rebuild = |wx: &[f64], wh: &[f64], b: &[f64]| {
        Lstm::from_parts(
            Tensor::new(vec![4 * hd, id], wx.to_vec()).unwrap(),
            Tensor::new(vec![4 * hd, hd], wh.to_vec()).unwrap(),
            Tensor::new(vec![4 * hd], b.to_vec()).unwrap(),
        )
        .unwrap()
    };
    let (wx, wh, b) = (layer.w_input.data().to_vec(), layer.w_recurrent.data().to_vec(), layer.bias.data().to_vec());
    check_coords(&mut wx.clone(), g.w_input.data(), &|p| loss(&rebuild(p, &wh, &b), &x, &init), &mut rng);
    check_coords(&mut wh.clone(), g.w_recurrent.data(), &|p| loss(&rebuild(&wx, p, &b), &x, &init), &mut rng);
    check_coords(&mut b.clone(), g.bias.data(), &|p| loss(&rebuild(&wx, &wh, p), &x, &init), &mut rng);
    check_coords(&mut x.clone(), &g.inputs, &|p| loss(&layer, p, &init), &mut rng);
    check_coords(
        &mut init.h.clone(),
        &g.initial.h,
        &|p| loss(&layer, &x, &LstmState { h: p.to_vec(), c: init.c.clone() }),
        &mut rng,
    );
    check_coords(
        &mut init.c.clone(),
        &g.initial.c,
        &|p| loss(&layer, &x, &LstmState { h: init.h.clone(), c: p.to_vec() }),
        &mut rng,
    );
}

// Plain functions so the acceptance binary can call them too.
macro_rules! register {
    ($($name:ident),*) => {
        #[cfg(test)]
        mod run {
            $(#[test]
            fn $name() {
                super::$name()
            })*
        }
    };
}

register!(conv_matches_quadruple_loop, first_convolution_of_28_pixel_input, pool_matches_loop, dense_matches_dot_products, softmax_matches_direct_formula, lstm_matches_scalar_recurrence, conv_gradients, pool_and_dense_gradients, lstm_gradients);
