//! Hand-crafted fingerprint baseline: packet features, one-vs-rest random
//! forests and edit-distance discrimination.

mod classifier;
mod edit_distance;
mod features;
mod forest;

pub use classifier::{baseline_predict, BaselineClassifier, BaselineConfig, UNKNOWN_SYMBOL};
pub use edit_distance::{damerau_levenshtein, normalized_distance};
pub use features::{
    extract_fingerprint, fingerprint_csv, flatten_fingerprint, packet_features, port_class,
    unflatten_fingerprint, Fingerprint, PacketFeatures, FEATURE_COUNT, FEATURE_NAMES,
};
pub use forest::{train_random_forest, DecisionTree, ForestConfig, Node, RandomForest};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("feature vector has {found} values, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no positive or no negative examples for {0:?}")]
    EmptyClass(String),
    #[error("training fingerprint without a label")]
    MissingLabel,
    #[error("need at least two device types, got {0}")]
    TooFewTypes(usize),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("unknown device type {0:?}")]
    UnknownType(String),
    #[error("classifier format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("classifier JSON: {0}")]
    Json(#[from] serde_json::Error),
}
