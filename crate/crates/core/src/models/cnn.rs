//! Convolutional classifier over byte images: two conv + average-pool
//! stages, two ReLU dense layers, softmax output.

use iotid_nn::activation::{relu_backward_in_place, relu_in_place, softmax_rows};
use iotid_nn::adam::AdamState;
use iotid_nn::conv::{Conv2d, ConvCache};
use iotid_nn::dense::Dense;
use iotid_nn::loss::probability_logit_grad;
use iotid_nn::pool::{avgpool_backward, avgpool_forward};
use iotid_nn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_batch, parse_tag_fields, softmax_loss, ModelError, NeuralModel, Result, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    /// Images are `input_side × input_side`, one channel.
    pub input_side: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub dense1: usize,
    pub dense2: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { input_side: 28, conv1_channels: 32, conv1_kernel: 5, conv2_channels: 64, conv2_kernel: 5, dense1: 120, dense2: 84 }
    }
}

impl CnnConfig {
    fn tag(&self, n_classes: usize) -> String {
        format!(
            "side={};c1={};k1={};c2={};k2={};d1={};d2={};classes={}",
            self.input_side, self.conv1_channels, self.conv1_kernel, self.conv2_channels, self.conv2_kernel,
            self.dense1, self.dense2, n_classes
        )
    }

    pub(crate) fn parse_tag(tag: &str) -> Option<(Self, usize)> {
        let f = parse_tag_fields(tag);
        Some((
            Self {
                input_side: *f.get("side")?,
                conv1_channels: *f.get("c1")?,
                conv1_kernel: *f.get("k1")?,
                conv2_channels: *f.get("c2")?,
                conv2_kernel: *f.get("k2")?,
                dense1: *f.get("d1")?,
                dense2: *f.get("d2")?,
            },
            *f.get("classes")?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    config: CnnConfig,
    n_classes: usize,
    conv1: Conv2d,
    conv2: Conv2d,
    fc1: Dense,
    fc2: Dense,
    out: Dense,
}

struct Cache {
    batch: usize,
    conv1: ConvCache,
    a1: Tensor,
    conv2: ConvCache,
    a2: Tensor,
    flat: Tensor,
    h1: Tensor,
    h2: Tensor,
}

impl CnnModel {
    pub fn new(config: CnnConfig, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(ModelError::TooFewClasses(n_classes));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::new(1, config.conv1_channels, config.conv1_kernel, &mut rng);
        let conv2 = Conv2d::new(config.conv1_channels, config.conv2_channels, config.conv2_kernel, &mut rng);
        let s1 = conv1.output_shape(1, config.input_side, config.input_side)?;
        let s2 = conv2.output_shape(s1[0], s1[1] / 2, s1[2] / 2)?;
        let flat = s2[0] * (s2[1] / 2) * (s2[2] / 2);
        let fc1 = Dense::new(flat, config.dense1, &mut rng);
        let fc2 = Dense::new(config.dense1, config.dense2, &mut rng);
        let out = Dense::new(config.dense2, n_classes, &mut rng);
        let model = Self { config, n_classes, conv1, conv2, fc1, fc2, out };
        // Dry run: catches odd pooling sizes and any other shape disagreement.
        let probs = model.predict_proba(&vec![0.0; model.input_len()], 1)?;
        debug_assert_eq!(probs.len(), n_classes);
        Ok(model)
    }

    /// The default network over a 28×28 image.
    pub fn build(n_classes: usize, seed: u64) -> Result<Self> {
        Self::new(CnnConfig::default(), n_classes, seed)
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    /// Output shape after every layer, from the first convolution to the softmax.
    pub fn shape_chain(&self) -> Vec<(&'static str, Vec<usize>)> {
        let s = self.config.input_side;
        let c1 = self.conv1.output_shape(1, s, s).expect("validated");
        let p1 = [c1[0], c1[1] / 2, c1[2] / 2];
        let c2 = self.conv2.output_shape(p1[0], p1[1], p1[2]).expect("validated");
        let p2 = [c2[0], c2[1] / 2, c2[2] / 2];
        vec![
            ("input", vec![s, s, 1]),
            ("conv1", vec![c1[1], c1[2], c1[0]]),
            ("pool1", vec![p1[1], p1[2], p1[0]]),
            ("conv2", vec![c2[1], c2[2], c2[0]]),
            ("pool2", vec![p2[1], p2[2], p2[0]]),
            ("flatten", vec![p2[0] * p2[1] * p2[2]]),
            ("dense1", vec![self.fc1.outputs()]),
            ("dense2", vec![self.fc2.outputs()]),
            ("softmax", vec![self.n_classes]),
        ]
    }

    /// Parameter count per layer.
    pub fn layer_parameter_counts(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("conv1", self.conv1.weight.len() + self.conv1.bias.len()),
            ("conv2", self.conv2.weight.len() + self.conv2.bias.len()),
            ("dense1", self.fc1.weight.len() + self.fc1.bias.len()),
            ("dense2", self.fc2.weight.len() + self.fc2.bias.len()),
            ("output", self.out.weight.len() + self.out.bias.len()),
        ]
    }

    fn forward(&self, inputs: &[f64], batch: usize) -> Result<(Tensor, Cache)> {
        if inputs.len() != batch * self.input_len() {
            return Err(ModelError::InputShape { expected: self.input_len(), found: inputs.len() / batch.max(1) });
        }
        let s = self.config.input_side;
        let x = Tensor::new(vec![batch, 1, s, s], inputs.to_vec())?;
        x.ensure_finite("cnn input")?;
        let (mut a1, conv1) = self.conv1.forward(&x)?;
        relu_in_place(a1.data_mut());
        let p1 = avgpool_forward(&a1)?;
        let (mut a2, conv2) = self.conv2.forward(&p1)?;
        relu_in_place(a2.data_mut());
        let p2 = avgpool_forward(&a2)?;
        let width = p2.len() / batch;
        let flat = Tensor::new(vec![batch, width], p2.into_data())?;
        let mut h1 = self.fc1.forward(&flat)?;
        relu_in_place(h1.data_mut());
        let mut h2 = self.fc2.forward(&h1)?;
        relu_in_place(h2.data_mut());
        let logits = self.out.forward(&h2)?;
        Ok((logits, Cache { batch, conv1, a1, conv2, a2, flat, h1, h2 }))
    }

    /// Parameter gradients (in `parameters()` order) and the input gradient.
    fn backward(&self, cache: &Cache, grad_logits: &Tensor, need_input: bool) -> Result<(Vec<Tensor>, Vec<f64>)> {
        let g_out = self.out.backward(&cache.h2, grad_logits)?;
        let mut d = g_out.input;
        relu_backward_in_place(cache.h2.data(), d.data_mut());
        let g_fc2 = self.fc2.backward(&cache.h1, &d)?;
        let mut d = g_fc2.input;
        relu_backward_in_place(cache.h1.data(), d.data_mut());
        let g_fc1 = self.fc1.backward(&cache.flat, &d)?;
        let a2_shape = cache.a2.shape();
        let pooled_shape = vec![cache.batch, a2_shape[1], a2_shape[2] / 2, a2_shape[3] / 2];
        let d = Tensor::new(pooled_shape, g_fc1.input.into_data())?;
        let mut d = avgpool_backward(&d, a2_shape)?;
        relu_backward_in_place(cache.a2.data(), d.data_mut());
        let g_conv2 = self.conv2.backward(&cache.conv2, &d, true)?;
        let mut d = avgpool_backward(&g_conv2.input.expect("requested"), cache.a1.shape())?;
        relu_backward_in_place(cache.a1.data(), d.data_mut());
        let g_conv1 = self.conv1.backward(&cache.conv1, &d, need_input)?;
        let input_grad = g_conv1.input.map(Tensor::into_data).unwrap_or_default();
        Ok((
            vec![
                g_conv1.weight,
                g_conv1.bias,
                g_conv2.weight,
                g_conv2.bias,
                g_fc1.weight,
                g_fc1.bias,
                g_fc2.weight,
                g_fc2.bias,
                g_out.weight,
                g_out.bias,
            ],
            input_grad,
        ))
    }
}

impl NeuralModel for CnnModel {
    fn architecture(&self) -> String {
        format!("cnn;{}", self.config.tag(self.n_classes))
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_len(&self) -> usize {
        self.config.input_side * self.config.input_side
    }

    fn parameter_names(&self) -> Vec<String> {
        ["conv1", "conv2", "dense1", "dense2", "output"]
            .iter()
            .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
            .collect()
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
            &self.out.weight,
            &self.out.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    fn predict_proba(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let (logits, _) = self.forward(inputs, batch)?;
        Ok(softmax_rows(&logits)?.into_data())
    }

    fn loss_gradients(
        &self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        _dropout: Option<(f64, u64)>,
    ) -> Result<(f64, Vec<Tensor>, Vec<f64>)> {
        check_batch(self, inputs, labels, weights)?;
        let (logits, cache) = self.forward(inputs, labels.len())?;
        let (loss, _, grad) = softmax_loss(&logits, labels, weights)?;
        let (grads, input_grad) = self.backward(&cache, &grad, true)?;
        Ok((loss, grads, input_grad))
    }

    fn probability_gradient(&self, input: &[f64], class: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (logits, cache) = self.forward(input, 1)?;
        let probs = softmax_rows(&logits)?.into_data();
        let g = Tensor::new(vec![1, self.n_classes], probability_logit_grad(&probs, class))?;
        let (_, input_grad) = self.backward(&cache, &g, true)?;
        Ok((probs, input_grad))
    }

    fn train_batch(
        &mut self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        config: &TrainConfig,
        optimizer: &mut AdamState,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        check_batch(self, inputs, labels, weights)?;
        let (logits, cache) = self.forward(inputs, labels.len())?;
        let (loss, probs, grad) = softmax_loss(&logits, labels, weights)?;
        let (grads, _) = self.backward(&cache, &grad, false)?;
        iotid_nn::adam::adam_update(&mut self.parameters_mut(), &grads, optimizer, config.learning_rate)?;
        Ok((loss, probs.into_data()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes_and_counts() {
        let m = CnnModel::build(27, 1).unwrap();
        let chain: Vec<Vec<usize>> = m.shape_chain().into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            chain,
            vec![
                vec![28, 28, 1],
                vec![24, 24, 32],
                vec![12, 12, 32],
                vec![8, 8, 64],
                vec![4, 4, 64],
                vec![1024],
                vec![120],
                vec![84],
                vec![27]
            ]
        );
        let counts: Vec<usize> = m.layer_parameter_counts().into_iter().map(|(_, c)| c).collect();
        assert_eq!(counts, vec![32 * 26, 64 * (32 * 25 + 1), 1024 * 120 + 120, 120 * 84 + 84, 84 * 27 + 27]);
        assert_eq!(m.parameter_count(), counts.iter().sum::<usize>());
    }

    #[test]
    fn zero_image_gives_distribution_and_builds_are_deterministic() {
        let m = CnnModel::build(27, 5).unwrap();
        let p = m.predict_proba(&[0.0; 784], 1).unwrap();
        assert_eq!(p.len(), 27);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(m, CnnModel::build(27, 5).unwrap());
        assert_ne!(m, CnnModel::build(27, 6).unwrap());
        assert!(matches!(CnnModel::build(1, 0), Err(ModelError::TooFewClasses(1))));
    }

    #[test]
    fn odd_pooling_is_rejected() {
        let config = CnnConfig { input_side: 9, conv1_kernel: 3, ..CnnConfig::default() };
        assert!(CnnModel::new(config, 3, 0).is_err());
    }
}
