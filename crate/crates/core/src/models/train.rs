//! Mini-batch training with class-weighted loss, per-epoch history and
//! batched prediction.

use std::fmt::Write as _;
use std::path::Path;

use iotid_nn::adam::AdamState;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::representation::{LabeledSample, IMAGE_LEN};

use super::{ModelError, NeuralModel, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Chunk length in timesteps for recurrent models; `None` trains on the
    /// full sequence with one update per batch.
    pub tbptt_chunk: Option<usize>,
    /// Dropout rate in front of the recurrent model's dense head.
    pub dropout: f64,
    /// Loss weight per class index; `None` weighs all classes equally.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            learning_rate: 1e-3,
            tbptt_chunk: Some(7),
            dropout: 0.2,
            class_weights: None,
            seed: 0,
        }
    }
}

/// Normalized model inputs, one row of `width` values per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub width: usize,
}

impl TensorData {
    /// Byte windows zero-padded to 784 and scaled to [0, 1].
    pub fn from_samples(samples: &[LabeledSample]) -> Self {
        let mut inputs = Vec::with_capacity(samples.len() * IMAGE_LEN);
        for s in samples {
            inputs.extend(s.image().normalized());
        }
        Self { inputs, labels: samples.iter().map(|s| s.label).collect(), width: IMAGE_LEN }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut inputs = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        (inputs, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the predictions made while training through the epoch.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
        for r in &self.epochs {
            let test = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.train_acc, test);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|r| r.test_acc)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class and probability vector per sample, dropout off.
pub fn predict(model: &dyn NeuralModel, data: &TensorData) -> Result<Vec<(usize, Vec<f64>)>> {
    if data.width != model.input_len() {
        return Err(ModelError::InputShape { expected: model.input_len(), found: data.width });
    }
    let c = model.n_classes();
    let mut out = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(64) {
        let (inputs, _) = data.gather(chunk);
        let probs = model.predict_proba(&inputs, chunk.len())?;
        for row in probs.chunks(c) {
            out.push((argmax(row), row.to_vec()));
        }
    }
    Ok(out)
}

pub fn accuracy(model: &dyn NeuralModel, data: &TensorData) -> Result<f64> {
    let preds = predict(model, data)?;
    let correct = preds.iter().zip(&data.labels).filter(|((p, _), &l)| *p == l).count();
    Ok(correct as f64 / data.len().max(1) as f64)
}

pub fn train(
    model: &mut dyn NeuralModel,
    train_set: &TensorData,
    test_set: Option<&TensorData>,
    config: &TrainConfig,
) -> Result<TrainingHistory> {
    train_with_progress(model, train_set, test_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    model: &mut dyn NeuralModel,
    train_set: &TensorData,
    test_set: Option<&TensorData>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingHistory> {
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let n_classes = model.n_classes();
    if let Some(&label) = train_set.labels.iter().find(|&&l| l >= n_classes) {
        return Err(ModelError::LabelOutOfRange { label, classes: n_classes });
    }
    let weights = config.class_weights.clone().unwrap_or_else(|| vec![1.0; n_classes]);
    let mut optimizer = AdamState::new(&model.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainingHistory::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let (inputs, labels) = train_set.gather(chunk);
            let (loss, probs) = model.train_batch(&inputs, &labels, &weights, config, &mut optimizer, &mut rng)?;
            loss_sum += loss;
            batches += 1;
            correct += probs.chunks(n_classes).zip(&labels).filter(|(row, &l)| argmax(row) == l).count();
        }
        let test_acc = match test_set {
            Some(t) if !t.is_empty() => Some(accuracy(model, t)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CnnConfig, CnnModel};

    fn toy_cnn() -> CnnModel {
        let config = CnnConfig { input_side: 8, conv1_channels: 2, conv1_kernel: 3, conv2_channels: 3, conv2_kernel: 2, dense1: 6, dense2: 5 };
        CnnModel::new(config, 2, 4).unwrap()
    }

    fn black_white(n: usize, width: usize) -> TensorData {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            inputs.extend(std::iter::repeat_n(label as f64, width));
            labels.push(label);
        }
        TensorData { inputs, labels, width }
    }

    #[test]
    fn separable_toy_trains_quickly() {
        let mut model = CnnModel::build(2, 4).unwrap();
        let data = black_white(40, 784);
        let config = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
        let history = train(&mut model, &data, Some(&data), &config).unwrap();
        assert_eq!(history.epochs.len(), 3);
        assert_eq!(history.final_test_accuracy(), Some(1.0));
        let csv = history.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,train_loss,train_acc,test_acc"));
    }

    #[test]
    fn errors() {
        let mut model = toy_cnn();
        let empty = TensorData { inputs: vec![], labels: vec![], width: 64 };
        assert!(matches!(train(&mut model, &empty, None, &TrainConfig::default()), Err(ModelError::EmptyTrainingSet)));
        let bad = TensorData { inputs: vec![0.0; 64], labels: vec![5], width: 64 };
        assert!(matches!(
            train(&mut model, &bad, None, &TrainConfig::default()),
            Err(ModelError::LabelOutOfRange { label: 5, classes: 2 })
        ));
    }

    #[test]
    fn prediction_is_pure() {
        let model = toy_cnn();
        let data = black_white(6, 64);
        let a = predict(&model, &data).unwrap();
        assert_eq!(a, predict(&model, &data).unwrap());
        for (_, p) in &a {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
