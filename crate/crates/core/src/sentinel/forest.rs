//! Binary random forest: bootstrap samples, random feature subsets per
//! split, Gini impurity.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BaselineError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Minimum number of (bootstrap) samples in a leaf.
    pub min_leaf: usize,
    /// Features examined per split; `None` means `⌊√d⌋`.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 100, min_leaf: 2, max_features: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf { probability: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes are stored in an array; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn probability(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { probability } => return probability,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub dimension: usize,
    /// Device type this forest votes for.
    pub positive: String,
}

impl RandomForest {
    /// Mean positive-class probability over trees.
    pub fn probability(&self, x: &[f64]) -> Result<f64, BaselineError> {
        if x.len() != self.dimension {
            return Err(BaselineError::DimensionMismatch { expected: self.dimension, found: x.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.probability(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

pub fn train_random_forest(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    positive: &str,
    config: &ForestConfig,
    seed: u64,
) -> Result<RandomForest, BaselineError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(BaselineError::EmptyClass(positive.to_string()));
    }
    let dimension = positives[0].len();
    if let Some(bad) = positives.iter().chain(negatives).find(|v| v.len() != dimension) {
        return Err(BaselineError::DimensionMismatch { expected: dimension, found: bad.len() });
    }
    let xs: Vec<&[f64]> = positives.iter().chain(negatives).map(|v| v.as_slice()).collect();
    let ys: Vec<bool> = (0..xs.len()).map(|i| i < positives.len()).collect();
    let max_features = config
        .max_features
        .unwrap_or_else(|| (dimension as f64).sqrt().floor() as usize)
        .clamp(1, dimension.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..config.trees.max(1))
        .map(|_| {
            let sample: Vec<usize> = (0..xs.len()).map(|_| rng.gen_range(0..xs.len())).collect();
            let mut grower = Grower {
                xs: &xs,
                ys: &ys,
                min_leaf: config.min_leaf.max(1),
                max_features,
                rng: ChaCha8Rng::seed_from_u64(rng.gen()),
                nodes: Vec::new(),
            };
            grower.grow(sample);
            DecisionTree { nodes: grower.nodes }
        })
        .collect();
    Ok(RandomForest { trees, dimension, positive: positive.to_string() })
}

struct Grower<'a> {
    xs: &'a [&'a [f64]],
    ys: &'a [bool],
    min_leaf: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Grower<'_> {
    /// Appends the subtree for `sample` and returns its root index.
    fn grow(&mut self, sample: Vec<usize>) -> usize {
        let id = self.nodes.len();
        let pos = sample.iter().filter(|&&i| self.ys[i]).count();
        let probability = pos as f64 / sample.len() as f64;
        self.nodes.push(Node::Leaf { probability });
        if pos == 0 || pos == sample.len() || sample.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&sample, pos) else { return id };
        let (left, right): (Vec<usize>, Vec<usize>) =
            sample.into_iter().partition(|&i| self.xs[i][best.feature] <= best.threshold);
        let l = self.grow(left);
        let r = self.grow(right);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left: l, right: r };
        id
    }

    /// Examines random features until `max_features` non-constant ones have
    /// been tried, so constant columns never force a premature leaf.
    fn best_split(&mut self, sample: &[usize], pos: usize) -> Option<BestSplit> {
        let d = self.xs[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(&mut self.rng);
        let n = sample.len();
        let parent = gini(pos, n);
        let mut best: Option<BestSplit> = None;
        let mut tried = 0;
        let mut order: Vec<(f64, bool)> = Vec::with_capacity(n);
        for f in features {
            if tried >= self.max_features {
                break;
            }
            order.clear();
            order.extend(sample.iter().map(|&i| (self.xs[i][f], self.ys[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            tried += 1;
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += order[k - 1].1 as usize;
                if order[k - 1].0 == order[k].0 || k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let impurity = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k)) / n as f64;
                if impurity < parent - 1e-12 && best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(BestSplit { impurity, feature: f, threshold: 0.5 * (order[k - 1].0 + order[k].0) });
                }
            }
        }
        best
    }
}
