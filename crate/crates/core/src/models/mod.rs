//! The convolutional and recurrent classifiers, their training loop and
//! checkpointing.

mod cnn;
mod lstm;
mod train;

use std::path::Path;

use iotid_nn::activation::softmax_rows;
use iotid_nn::adam::AdamState;
use iotid_nn::checkpoint::Checkpoint;
use iotid_nn::loss::{cross_entropy_logit_grad, weighted_cross_entropy};
use iotid_nn::{NnError, Tensor};
use rand_chacha::ChaCha8Rng;

pub use cnn::{CnnConfig, CnnModel};
pub use lstm::{ChunkResult, LstmConfig, LstmModel};
pub use train::{accuracy, predict, train, train_with_progress, EpochRecord, TensorData, TrainConfig, TrainingHistory};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("input has {found} values per sample, model expects {expected}")]
    InputShape { expected: usize, found: usize },
    #[error("unrecognized architecture tag {0:?}")]
    UnknownArchitecture(String),
    #[error("class weight vector has {found} entries for {expected} classes")]
    WeightCount { expected: usize, found: usize },
    #[error("history CSV: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Common surface of the two trainable classifiers.
pub trait NeuralModel {
    /// Self-describing tag stored in checkpoints.
    fn architecture(&self) -> String;
    fn n_classes(&self) -> usize;
    /// Values per sample (784 for the byte window).
    fn input_len(&self) -> usize;
    fn parameter_names(&self) -> Vec<String>;
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Class probabilities, `[batch, n_classes]` row-major, dropout off.
    fn predict_proba(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>>;

    /// Weighted mean loss over the batch, full-sequence gradients for every
    /// parameter (in [`NeuralModel::parameters`] order) and the gradient with
    /// respect to the inputs. `dropout` is `(rate, mask seed)`; `None`
    /// disables dropout.
    fn loss_gradients(
        &self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        dropout: Option<(f64, u64)>,
    ) -> Result<(f64, Vec<Tensor>, Vec<f64>)>;

    /// Probabilities and the gradient of `p[class]` with respect to one input.
    fn probability_gradient(&self, input: &[f64], class: usize) -> Result<(Vec<f64>, Vec<f64>)>;

    /// One optimization step (or one step per chunk for recurrent models).
    /// Returns the batch loss and the probabilities the loss was computed on.
    fn train_batch(
        &mut self,
        inputs: &[f64],
        labels: &[usize],
        weights: &[f64],
        config: &TrainConfig,
        optimizer: &mut AdamState,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)>;

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: self.architecture(),
            tensors: self
                .parameter_names()
                .into_iter()
                .zip(self.parameters().into_iter().cloned())
                .collect(),
        }
    }
}

/// Either classifier, for code that loads checkpoints of unknown kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cnn(CnnModel),
    Lstm(LstmModel),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn NeuralModel {
        match self {
            Model::Cnn(m) => m,
            Model::Lstm(m) => m,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn NeuralModel {
        match self {
            Model::Cnn(m) => m,
            Model::Lstm(m) => m,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let tag = &ckpt.architecture;
        let mut model = if let Some(cfg) = tag.strip_prefix("cnn;") {
            let (config, n) = CnnConfig::parse_tag(cfg).ok_or_else(|| ModelError::UnknownArchitecture(tag.clone()))?;
            Model::Cnn(CnnModel::new(config, n, 0)?)
        } else if let Some(cfg) = tag.strip_prefix("lstm;") {
            let (config, n) = LstmConfig::parse_tag(cfg).ok_or_else(|| ModelError::UnknownArchitecture(tag.clone()))?;
            Model::Lstm(LstmModel::new(config, n, 0)?)
        } else {
            return Err(ModelError::UnknownArchitecture(tag.clone()));
        };
        let names = model.as_dyn().parameter_names();
        for (name, param) in names.iter().zip(model.as_dyn_mut().parameters_mut()) {
            let stored = ckpt.get(name)?;
            if stored.shape() != param.shape() {
                return Err(NnError::CorruptFile(format!("tensor {name} has shape {:?}", stored.shape())).into());
            }
            stored.ensure_finite("checkpoint tensor")?;
            *param = stored.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.as_dyn().to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Softmax, weighted mean cross-entropy and its logit gradient (already
/// divided by the batch size).
pub(crate) fn softmax_loss(
    logits: &Tensor,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor, Tensor)> {
    let probs = softmax_rows(logits)?;
    let n = labels.len();
    let c = logits.shape()[1];
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * c];
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(ModelError::LabelOutOfRange { label, classes: c });
        }
        let p = &probs.data()[i * c..(i + 1) * c];
        let w = weights[label];
        loss += weighted_cross_entropy(p, label, w)?;
        for (g, v) in grad[i * c..(i + 1) * c].iter_mut().zip(cross_entropy_logit_grad(p, label, w)?) {
            *g = v / n as f64;
        }
    }
    Ok((loss / n as f64, probs, Tensor::new(vec![n, c], grad)?))
}

pub(crate) fn check_batch(model: &dyn NeuralModel, inputs: &[f64], labels: &[usize], weights: &[f64]) -> Result<()> {
    if labels.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if inputs.len() != labels.len() * model.input_len() {
        return Err(ModelError::InputShape { expected: model.input_len(), found: inputs.len() / labels.len() });
    }
    if weights.len() != model.n_classes() {
        return Err(ModelError::WeightCount { expected: model.n_classes(), found: weights.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= model.n_classes()) {
        return Err(ModelError::LabelOutOfRange { label, classes: model.n_classes() });
    }
    Ok(())
}

pub(crate) fn parse_tag_fields(tag: &str) -> std::collections::HashMap<&str, usize> {
    tag.split(';')
        .filter_map(|kv| kv.split_once('='))
        .filter_map(|(k, v)| v.parse().ok().map(|v| (k, v)))
        .collect()
}
