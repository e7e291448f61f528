//! Two-step device-type identification: one-vs-rest forests propose
//! candidates, edit distance over symbolized fingerprints picks one.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edit_distance::normalized_distance;
use super::features::{flatten_fingerprint, Fingerprint, PacketFeatures};
use super::forest::{train_random_forest, ForestConfig, RandomForest};
use super::BaselineError;

/// Symbol for columns never seen during training.
pub const UNKNOWN_SYMBOL: u32 = 0;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub forest: ForestConfig,
    pub max_packets: usize,
    /// Forest probability at or above which a type becomes a candidate.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { forest: ForestConfig::default(), max_packets: 32, threshold: 0.5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineClassifier {
    version: u32,
    pub config: BaselineConfig,
    /// Sorted device types; forests and references follow this order.
    pub device_types: Vec<String>,
    pub forests: Vec<RandomForest>,
    /// Columns seen in training, as (column, symbol) pairs.
    symbols: Vec<(PacketFeatures, u32)>,
    pub references: Vec<Vec<Vec<u32>>>,
    #[serde(skip)]
    lookup: HashMap<PacketFeatures, u32>,
}

impl BaselineClassifier {
    /// Trains on labeled fingerprints (`label` must be set).
    pub fn train(fingerprints: &[Fingerprint], config: BaselineConfig) -> Result<Self, BaselineError> {
        let mut by_type: BTreeMap<String, Vec<&Fingerprint>> = BTreeMap::new();
        for fp in fingerprints {
            let label = fp.label.clone().ok_or(BaselineError::MissingLabel)?;
            by_type.entry(label).or_default().push(fp);
        }
        if by_type.len() < 2 {
            return Err(BaselineError::TooFewTypes(by_type.len()));
        }
        let device_types: Vec<String> = by_type.keys().cloned().collect();

        let mut lookup: HashMap<PacketFeatures, u32> = HashMap::new();
        let mut symbols = Vec::new();
        for fp in fingerprints {
            for column in &fp.columns {
                if !lookup.contains_key(column) {
                    let s = symbols.len() as u32 + 1;
                    lookup.insert(*column, s);
                    symbols.push((*column, s));
                }
            }
        }

        let flat: Vec<(String, Vec<f64>)> = fingerprints
            .iter()
            .map(|fp| (fp.label.clone().unwrap(), flatten_fingerprint(fp, config.max_packets)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut forests = Vec::with_capacity(device_types.len());
        for t in &device_types {
            let positives: Vec<Vec<f64>> = flat.iter().filter(|(l, _)| l == t).map(|(_, v)| v.clone()).collect();
            let negatives: Vec<Vec<f64>> = flat.iter().filter(|(l, _)| l != t).map(|(_, v)| v.clone()).collect();
            forests.push(train_random_forest(&positives, &negatives, t, &config.forest, rng.gen())?);
        }

        let mut clf = Self {
            version: FORMAT_VERSION,
            config,
            device_types,
            forests,
            symbols,
            references: Vec::new(),
            lookup,
        };
        clf.references = by_type.values().map(|fps| fps.iter().map(|fp| clf.symbolize(fp)).collect()).collect();
        Ok(clf)
    }

    pub fn symbolize(&self, fp: &Fingerprint) -> Vec<u32> {
        fp.columns.iter().map(|c| self.lookup.get(c).copied().unwrap_or(UNKNOWN_SYMBOL)).collect()
    }

    /// Types whose forest probability reaches the threshold.
    pub fn candidate_types(&self, fp: &Fingerprint) -> BTreeSet<String> {
        let x = flatten_fingerprint(fp, self.config.max_packets);
        self.forests
            .iter()
            .filter(|f| f.probability(&x).expect("dimension fixed at training") >= self.config.threshold)
            .map(|f| f.positive.clone())
            .collect()
    }

    /// Candidate with the smallest mean normalized edit distance to its
    /// reference fingerprints; ties go to the lexicographically first name.
    pub fn discriminate(&self, fp: &Fingerprint, candidates: &BTreeSet<String>) -> Result<String, BaselineError> {
        if candidates.is_empty() {
            return Err(BaselineError::EmptyCandidates);
        }
        let query = self.symbolize(fp);
        let mut best: Option<(f64, &String)> = None;
        // BTreeSet iterates in lexicographic order, so strict `<` keeps the
        // first name among equals.
        for name in candidates {
            let i = self
                .device_types
                .binary_search(name)
                .map_err(|_| BaselineError::UnknownType(name.clone()))?;
            let refs = &self.references[i];
            let mean = refs.iter().map(|r| normalized_distance(&query, r)).sum::<f64>() / refs.len() as f64;
            if best.is_none_or(|(d, _)| mean < d) {
                best = Some((mean, name));
            }
        }
        Ok(best.unwrap().1.clone())
    }

    /// Candidates first; with none, discrimination runs over every type.
    pub fn predict(&self, fp: &Fingerprint) -> String {
        let mut candidates = self.candidate_types(fp);
        if candidates.is_empty() {
            candidates = self.device_types.iter().cloned().collect();
        }
        self.discriminate(fp, &candidates).expect("candidates are known types")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        let mut clf: Self = serde_json::from_str(text)?;
        if clf.version != FORMAT_VERSION {
            return Err(BaselineError::VersionMismatch { expected: FORMAT_VERSION, found: clf.version });
        }
        clf.lookup = clf.symbols.iter().copied().collect();
        Ok(clf)
    }
}

/// Free-function form of [`BaselineClassifier::predict`].
pub fn baseline_predict(clf: &BaselineClassifier, fp: &Fingerprint) -> String {
    clf.predict(fp)
}
