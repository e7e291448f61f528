//! Recurrent classifier over byte sequences: a sequence-returning LSTM, a
//! second LSTM whose final hidden state feeds dropout, a ReLU dense layer
//! and the softmax output. Training uses truncated backpropagation through
//! time.

use iotid_nn::activation::{relu_backward_in_place, relu_in_place, softmax_rows};
use iotid_nn::adam::{adam_update, AdamState};
use iotid_nn::dense::Dense;
use iotid_nn::dropout::{apply_mask, Dropout};
use iotid_nn::loss::probability_logit_grad;
use iotid_nn::lstm::{Lstm, LstmState};
use iotid_nn::{NnError, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::representation::SequenceLayout;

use super::{check_batch, parse_tag_fields, softmax_loss, ModelError, NeuralModel, Result, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmConfig {
    pub steps: usize,
    pub features: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dense: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self::with_layout(SequenceLayout::Rows28)
    }
}

impl LstmConfig {
    pub fn with_layout(layout: SequenceLayout) -> Self {
        Self { steps: layout.steps(), features: layout.features(), hidden1: 128, hidden2: 128, dense: 64 }
    }

    fn tag(&self, n_classes: usize) -> String {
        format!(
            "steps={};features={};h1={};h2={};dense={};classes={}",
            self.steps, self.features, self.hidden1, self.hidden2, self.dense, n_classes
        )
    }

    pub(crate) fn parse_tag(tag: &str) -> Option<(Self, usize)> {
        let f = parse_tag_fields(tag);
        Some((
            Self {
                steps: *f.get("steps")?,
                features: *f.get("features")?,
                hidden1: *f.get("h1")?,
                hidden2: *f.get("h2")?,
                dense: *f.get("dense")?,
            },
            *f.get("classes")?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    config: LstmConfig,
    n_classes: usize,
    lstm1: Lstm,
    lstm2: Lstm,
    fc: Dense,
    out: Dense,
}

/// Outcome of forward and backward passes over one chunk of timesteps.
#[derive(Debug, Clone)]
pub struct ChunkResult {
    pub loss: f64,
    /// `[batch, n_classes]` probabilities at the chunk's last step.
    pub probabilities: Vec<f64>,
    /// Parameter gradients in `parameters()` order.
    pub gradients: Vec<Tensor>,
    /// Gradient with respect to the chunk's inputs, sample-major
    /// (`batch × chunk_steps × features`).
    pub input_gradient: Vec<f64>,
    /// States after the chunk, to be carried (detached) into the next one.
    pub state1: LstmState,
    pub state2: LstmState,
}

impl LstmModel {
    pub fn new(config: LstmConfig, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(ModelError::TooFewClasses(n_classes));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm1 = Lstm::new(config.features, config.hidden1, &mut rng);
        let lstm2 = Lstm::new(config.hidden1, config.hidden2, &mut rng);
        let fc = Dense::new(config.hidden2, config.dense, &mut rng);
        let out = Dense::new(config.dense, n_classes, &mut rng);
        let model = Self { config, n_classes, lstm1, lstm2, fc, out };
        let probs = model.predict_proba(&vec![0.0; model.input_len()], 1)?;
        debug_assert_eq!(probs.len(), n_classes);
        Ok(model)
    }

    /// The default network over 28 steps of 28 bytes.
    pub fn build(n_classes: usize, seed: u64) -> Result<Self> {
        Self::new(LstmConfig::default(), n_classes, seed)
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    pub fn shape_chain(&self) -> Vec<(&'static str, Vec<usize>)> {
        let c = &self.config;
        vec![
            ("input", vec![c.steps, c.features]),
            ("lstm1", vec![c.steps, c.hidden1]),
            ("lstm2", vec![c.hidden2]),
            ("dropout", vec![c.hidden2]),
            ("dense", vec![c.dense]),
            ("softmax", vec![self.n_classes]),
        ]
    }

    pub fn layer_parameter_counts(&self) -> Vec<(&'static str, usize)> {
        let lstm = |l: &Lstm| l.w_input.len() + l.w_recurrent.len() + l.bias.len();
        vec![
            ("lstm1", lstm(&self.lstm1)),
            ("lstm2", lstm(&self.lstm2)),
            ("dense", self.fc.weight.len() + self.fc.bias.len()),
            ("output", self.out.weight.len() + self.out.bias.len()),
        ]
    }

    pub fn zero_states(&self, batch: usize) -> (LstmState, LstmState) {
        (LstmState::zeros(batch, self.config.hidden1), LstmState::zeros(batch, self.config.hidden2))
    }

    /// Steps `t0..t1` of sample-major inputs rearranged time-major.
    fn time_major(&self, inputs: &[f64], batch: usize, t0: usize, t1: usize) -> Vec<f64> {
        let (steps, f) = (self.config.steps, self.config.features);
        let mut out = Vec::with_capacity((t1 - t0) * batch * f);
        for t in t0..t1 {
            for n in 0..batch {
                let start = (n * steps + t) * f;
                out.extend_from_slice(&inputs[start..start + f]);
            }
        }
        out
    }

    /// Forward over steps `t0..t1` from the given states, head applied to the
    /// final hidden state of the second layer, then backward confined to the
    /// chunk: nothing flows into the initial states' producers.
    #[allow(clippy::too_many_arguments)]
    pub fn chunk_gradients(
        &self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        t0: usize,
        t1: usize,
        initial: (&LstmState, &LstmState),
        dropout_mask: Option<&[f64]>,
    ) -> Result<ChunkResult> {
        check_batch(self, inputs, labels, weights)?;
        if t0 >= t1 || t1 > self.config.steps {
            return Err(NnError::BadChunkLength(t1.saturating_sub(t0)).into());
        }
        let batch = labels.len();
        let len = t1 - t0;
        let (h1, h2, f) = (self.config.hidden1, self.config.hidden2, self.config.features);
        let x = self.time_major(inputs, batch, t0, t1);
        let (out1, state1, cache1) = self.lstm1.forward(&x, len, batch, initial.0)?;
        let (_, state2, cache2) = self.lstm2.forward(&out1, len, batch, initial.1)?;

        let mut z = state2.h.clone();
        if let Some(mask) = dropout_mask {
            apply_mask(&mut z, mask);
        }
        let z = Tensor::new(vec![batch, h2], z)?;
        let mut a = self.fc.forward(&z)?;
        relu_in_place(a.data_mut());
        let logits = self.out.forward(&a)?;
        let (loss, probs, grad) = softmax_loss(&logits, labels, weights)?;

        let g_out = self.out.backward(&a, &grad)?;
        let mut d = g_out.input;
        relu_backward_in_place(a.data(), d.data_mut());
        let g_fc = self.fc.backward(&z, &d)?;
        let mut dh = g_fc.input.into_data();
        if let Some(mask) = dropout_mask {
            apply_mask(&mut dh, mask);
        }
        let final_grad = LstmState { h: dh, c: vec![0.0; batch * h2] };
        let g2 = self.lstm2.backward(&cache2, &vec![0.0; len * batch * h2], Some(&final_grad))?;
        let g1 = self.lstm1.backward(&cache1, &g2.inputs, None)?;
        debug_assert_eq!(g2.inputs.len(), len * batch * h1);

        let mut input_gradient = vec![0.0; batch * len * f];
        for t in 0..len {
            for n in 0..batch {
                let src = (t * batch + n) * f;
                let dst = (n * len + t) * f;
                input_gradient[dst..dst + f].copy_from_slice(&g1.inputs[src..src + f]);
            }
        }
        Ok(ChunkResult {
            loss,
            probabilities: probs.into_data(),
            gradients: vec![
                g1.w_input,
                g1.w_recurrent,
                g1.bias,
                g2.w_input,
                g2.w_recurrent,
                g2.bias,
                g_fc.weight,
                g_fc.bias,
                g_out.weight,
                g_out.bias,
            ],
            input_gradient,
            state1,
            state2,
        })
    }

    /// Chunk boundaries for a chunk length; `None` means one full-length chunk.
    pub fn chunks(&self, chunk: Option<usize>) -> Result<Vec<(usize, usize)>> {
        let steps = self.config.steps;
        let len = match chunk {
            Some(0) => return Err(NnError::BadChunkLength(0).into()),
            Some(c) => c.min(steps),
            None => steps,
        };
        Ok((0..steps).step_by(len).map(|t0| (t0, (t0 + len).min(steps))).collect())
    }

    /// Per-chunk results with parameters held fixed and states carried
    /// forward; the training loop applies an update between chunks instead.
    pub fn tbptt_gradients(
        &self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        chunk: Option<usize>,
    ) -> Result<Vec<ChunkResult>> {
        let (mut s1, mut s2) = self.zero_states(labels.len());
        let mut results = Vec::new();
        for (t0, t1) in self.chunks(chunk)? {
            let r = self.chunk_gradients(inputs, labels, weights, t0, t1, (&s1, &s2), None)?;
            s1 = r.state1.clone();
            s2 = r.state2.clone();
            results.push(r);
        }
        Ok(results)
    }

    fn head_probabilities(&self, h: Vec<f64>, batch: usize) -> Result<Vec<f64>> {
        let z = Tensor::new(vec![batch, self.config.hidden2], h)?;
        let mut a = self.fc.forward(&z)?;
        relu_in_place(a.data_mut());
        Ok(softmax_rows(&self.out.forward(&a)?)?.into_data())
    }
}

impl NeuralModel for LstmModel {
    fn architecture(&self) -> String {
        format!("lstm;{}", self.config.tag(self.n_classes))
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_len(&self) -> usize {
        self.config.steps * self.config.features
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in ["lstm1", "lstm2"] {
            for p in ["w_input", "w_recurrent", "bias"] {
                names.push(format!("{l}.{p}"));
            }
        }
        for l in ["dense", "output"] {
            names.push(format!("{l}.weight"));
            names.push(format!("{l}.bias"));
        }
        names
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![
            &self.lstm1.w_input,
            &self.lstm1.w_recurrent,
            &self.lstm1.bias,
            &self.lstm2.w_input,
            &self.lstm2.w_recurrent,
            &self.lstm2.bias,
            &self.fc.weight,
            &self.fc.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.lstm1.w_input,
            &mut self.lstm1.w_recurrent,
            &mut self.lstm1.bias,
            &mut self.lstm2.w_input,
            &mut self.lstm2.w_recurrent,
            &mut self.lstm2.bias,
            &mut self.fc.weight,
            &mut self.fc.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    fn predict_proba(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        if inputs.len() != batch * self.input_len() {
            return Err(ModelError::InputShape { expected: self.input_len(), found: inputs.len() / batch.max(1) });
        }
        iotid_nn::ensure_finite(inputs, "lstm input")?;
        let steps = self.config.steps;
        let x = self.time_major(inputs, batch, 0, steps);
        let (s1, s2) = self.zero_states(batch);
        let (out1, _, _) = self.lstm1.forward(&x, steps, batch, &s1)?;
        let (_, fin, _) = self.lstm2.forward(&out1, steps, batch, &s2)?;
        self.head_probabilities(fin.h, batch)
    }

    fn loss_gradients(
        &self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        dropout: Option<(f64, u64)>,
    ) -> Result<(f64, Vec<Tensor>, Vec<f64>)> {
        let batch = labels.len();
        let mask = match dropout {
            Some((rate, seed)) => Some(
                Dropout::new(rate)?.sample_mask(batch * self.config.hidden2, &mut ChaCha8Rng::seed_from_u64(seed)),
            ),
            None => None,
        };
        let (s1, s2) = self.zero_states(batch);
        let r = self.chunk_gradients(inputs, labels, weights, 0, self.config.steps, (&s1, &s2), mask.as_deref())?;
        Ok((r.loss, r.gradients, r.input_gradient))
    }

    fn probability_gradient(&self, input: &[f64], class: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.len() != self.input_len() {
            return Err(ModelError::InputShape { expected: self.input_len(), found: input.len() });
        }
        let (steps, h2) = (self.config.steps, self.config.hidden2);
        let (s1, s2) = self.zero_states(1);
        let (out1, _, cache1) = self.lstm1.forward(input, steps, 1, &s1)?;
        let (_, fin, cache2) = self.lstm2.forward(&out1, steps, 1, &s2)?;
        let z = Tensor::new(vec![1, h2], fin.h)?;
        let mut a = self.fc.forward(&z)?;
        relu_in_place(a.data_mut());
        let probs = softmax_rows(&self.out.forward(&a)?)?.into_data();
        let g = Tensor::new(vec![1, self.n_classes], probability_logit_grad(&probs, class))?;
        let mut d = self.out.backward(&a, &g)?.input;
        relu_backward_in_place(a.data(), d.data_mut());
        let dh = self.fc.backward(&z, &d)?.input.into_data();
        let final_grad = LstmState { h: dh, c: vec![0.0; h2] };
        let g2 = self.lstm2.backward(&cache2, &vec![0.0; steps * h2], Some(&final_grad))?;
        let g1 = self.lstm1.backward(&cache1, &g2.inputs, None)?;
        // batch 1: time-major and sample-major coincide
        Ok((probs, g1.inputs))
    }

    fn train_batch(
        &mut self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        config: &TrainConfig,
        optimizer: &mut AdamState,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        let batch = labels.len();
        let dropout = Dropout::new(config.dropout)?;
        let (mut s1, mut s2) = self.zero_states(batch);
        let mut last = (0.0, Vec::new());
        for (t0, t1) in self.chunks(config.tbptt_chunk)? {
            let mask = dropout.sample_mask(batch * self.config.hidden2, rng);
            let r = self.chunk_gradients(inputs, labels, weights, t0, t1, (&s1, &s2), Some(&mask))?;
            adam_update(&mut self.parameters_mut(), &r.gradients, optimizer, config.learning_rate)?;
            s1 = r.state1;
            s2 = r.state2;
            last = (r.loss, r.probabilities);
        }
        Ok(last)
    }
}
