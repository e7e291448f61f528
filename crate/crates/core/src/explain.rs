//! Expected-gradients byte attribution and its per-byte and per-row
//! aggregation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{CnnModel, LstmModel, Model, ModelError, NeuralModel, TensorData};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("background set is empty")]
    EmptyBackground,
    #[error("no attribution maps to aggregate")]
    Empty,
    #[error("maps come from different models ({0:?} and {1:?})")]
    MixedModels(String, String),
    #[error("attribution length {0} is not a square grid")]
    NotSquare(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

/// Anything whose output probabilities can be differentiated with respect
/// to its input.
pub trait Differentiable {
    fn tag(&self) -> String;
    /// Outputs at `x` and the gradient of output `class` with respect to `x`.
    fn output_gradient(&self, x: &[f64], class: usize) -> std::result::Result<(Vec<f64>, Vec<f64>), ModelError>;
}

impl Differentiable for CnnModel {
    fn tag(&self) -> String {
        "cnn".into()
    }

    fn output_gradient(&self, x: &[f64], class: usize) -> std::result::Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.probability_gradient(x, class)
    }
}

impl Differentiable for LstmModel {
    fn tag(&self) -> String {
        "lstm".into()
    }

    /// Differentiates through the whole unrolled sequence.
    fn output_gradient(&self, x: &[f64], class: usize) -> std::result::Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.probability_gradient(x, class)
    }
}

impl Differentiable for Model {
    fn tag(&self) -> String {
        match self {
            Model::Cnn(m) => m.tag(),
            Model::Lstm(m) => m.tag(),
        }
    }

    fn output_gradient(&self, x: &[f64], class: usize) -> std::result::Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.as_dyn().probability_gradient(x, class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub scores: Vec<f64>,
    pub model: String,
    pub origin: String,
    pub class: usize,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `score_i = E[(x_i - x'_i) · ∂f_c/∂x_i (x' + α(x - x'))]` with `x'` drawn
/// from `background`, `α ~ U(0, 1)` and `c` the class predicted for `x`.
pub fn expected_gradients<M: Differentiable + ?Sized>(
    model: &M,
    x: &[f64],
    background: &[Vec<f64>],
    n_draws: usize,
    seed: u64,
) -> Result<AttributionMap> {
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    let (outputs, _) = model.output_gradient(x, 0)?;
    let class = argmax(&outputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for _ in 0..n_draws.max(1) {
        let reference = &background[rng.gen_range(0..background.len())];
        let alpha: f64 = rng.gen();
        for ((p, &xi), &ri) in point.iter_mut().zip(x).zip(reference) {
            *p = ri + alpha * (xi - ri);
        }
        let (_, grad) = model.output_gradient(&point, class)?;
        for (((s, &xi), &ri), g) in scores.iter_mut().zip(x).zip(reference).zip(grad) {
            *s += (xi - ri) * g;
        }
    }
    for s in &mut scores {
        *s /= n_draws.max(1) as f64;
    }
    Ok(AttributionMap { scores, model: model.tag(), origin: String::new(), class })
}

/// `count` rows taken round-robin across classes from per-class shuffles.
pub fn stratified_background(data: &TensorData, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in data.labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(count);
    let mut depth = 0;
    while out.len() < count.min(data.len()) {
        for pool in &pools {
            if let Some(&i) = pool.get(depth) {
                if out.len() < count {
                    out.push(data.row(i).to_vec());
                }
            }
        }
        depth += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceSummary {
    pub model: String,
    /// Mean absolute score per byte position.
    pub per_byte: Vec<f64>,
    /// Mean of `per_byte` over each image row.
    pub per_row: Vec<f64>,
    /// Rows whose mean exceeds twice the global mean.
    pub peak_rows: Vec<usize>,
    /// Byte positions sorted by decreasing importance (first ten).
    pub top_bytes: Vec<usize>,
    pub max_index: usize,
    pub max_value: f64,
    pub mean_value: f64,
}

pub fn aggregate_importance(maps: &[AttributionMap]) -> Result<ImportanceSummary> {
    let first = maps.first().ok_or(ExplainError::Empty)?;
    if let Some(other) = maps.iter().find(|m| m.model != first.model) {
        return Err(ExplainError::MixedModels(first.model.clone(), other.model.clone()));
    }
    let len = first.scores.len();
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(ExplainError::NotSquare(len));
    }
    let mut per_byte = vec![0.0; len];
    for m in maps {
        for (acc, s) in per_byte.iter_mut().zip(&m.scores) {
            *acc += s.abs();
        }
    }
    for v in &mut per_byte {
        *v /= maps.len() as f64;
    }
    let per_row: Vec<f64> = per_byte.chunks(side).map(|r| r.iter().sum::<f64>() / side as f64).collect();
    let mean_value = per_byte.iter().sum::<f64>() / len as f64;
    let peak_rows = per_row.iter().enumerate().filter(|(_, &r)| r > 2.0 * mean_value).map(|(i, _)| i).collect();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| per_byte[b].total_cmp(&per_byte[a]).then(a.cmp(&b)));
    let max_index = order[0];
    Ok(ImportanceSummary {
        model: first.model.clone(),
        max_value: per_byte[max_index],
        max_index,
        mean_value,
        top_bytes: order.into_iter().take(10).collect(),
        per_byte,
        per_row,
        peak_rows,
    })
}

#[derive(Debug, Serialize)]
struct SummaryJson<'a> {
    model: &'a str,
    max_index: usize,
    max_value: f64,
    mean_value: f64,
}

impl ImportanceSummary {
    pub fn byte_csv(&self) -> String {
        let side = self.per_row.len();
        let mut out = String::from("byte_index,row,column,mean_abs_score\n");
        for (i, v) in self.per_byte.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{v}", i / side, i % side);
        }
        out
    }

    pub fn row_csv(&self) -> String {
        let mut out = String::from("row,mean_abs_score,peak\n");
        for (r, v) in self.per_row.iter().enumerate() {
            let _ = writeln!(out, "{r},{v},{}", u8::from(self.peak_rows.contains(&r)));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&SummaryJson {
            model: &self.model,
            max_index: self.max_index,
            max_value: self.max_value,
            mean_value: self.mean_value,
        })
        .expect("serializable")
    }
}

/// Writes `<model>_byte_importance.csv`, `<model>_row_importance.csv` and
/// `<model>_importance_summary.json` into `dir`.
pub fn importance_report(summary: &ImportanceSummary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let m = &summary.model;
    std::fs::write(dir.join(format!("{m}_byte_importance.csv")), summary.byte_csv())?;
    std::fs::write(dir.join(format!("{m}_row_importance.csv")), summary.row_csv())?;
    std::fs::write(dir.join(format!("{m}_importance_summary.json")), summary.summary_json())?;
    Ok(())
}
