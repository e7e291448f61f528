//! Accuracy, macro precision/recall, confusion matrices and per-sample
//! latency measurement.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvaluationError {
    #[error("{truths} truths but {predictions} predictions")]
    LengthMismatch { truths: usize, predictions: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("label {0} is outside the class list")]
    UnknownLabel(usize),
    #[error("latency needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub samples: usize,
    /// Classes that occur among truths or predictions, ascending.
    pub per_class: Vec<ClassMetrics>,
}

/// One-vs-rest precision and recall per class, macro-averaged over the
/// classes that appear in either list. A class that is never predicted has
/// precision 0; one that never occurs has recall 0.
pub fn compute_metrics(truths: &[usize], predictions: &[usize]) -> Result<MetricsReport, EvaluationError> {
    if truths.len() != predictions.len() {
        return Err(EvaluationError::LengthMismatch { truths: truths.len(), predictions: predictions.len() });
    }
    if truths.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let n_classes = truths.iter().chain(predictions).max().unwrap() + 1;
    let mut tp = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    for (&t, &p) in truths.iter().zip(predictions) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .filter(|&c| support[c] > 0 || predicted[c] > 0)
        .map(|c| ClassMetrics {
            class: c,
            precision: ratio(tp[c], predicted[c]),
            recall: ratio(tp[c], support[c]),
            support: support[c],
            predicted: predicted[c],
        })
        .collect();
    let k = per_class.len() as f64;
    Ok(MetricsReport {
        accuracy: tp.iter().sum::<usize>() as f64 / truths.len() as f64,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        samples: truths.len(),
        per_class,
    })
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(truths: &[usize], predictions: &[usize], classes: &[String]) -> Result<ConfusionMatrix, EvaluationError> {
    if truths.len() != predictions.len() {
        return Err(EvaluationError::LengthMismatch { truths: truths.len(), predictions: predictions.len() });
    }
    let n = classes.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (&t, &p) in truths.iter().zip(predictions) {
        if t >= n {
            return Err(EvaluationError::UnknownLabel(t));
        }
        if p >= n {
            return Err(EvaluationError::UnknownLabel(p));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { classes: classes.to_vec(), counts })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total().max(1) as f64
    }

    /// Each non-empty row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter().map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 }).collect()
            })
            .collect()
    }

    fn csv_with(&self, cell: impl Fn(usize, usize) -> String) -> String {
        let mut out = String::from("true\\predicted");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, name) in self.classes.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.classes.len() {
                let _ = write!(out, ",{}", cell(i, j));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        self.csv_with(|i, j| self.counts[i][j].to_string())
    }

    /// Row-normalized values with two decimals.
    pub fn to_normalized_csv(&self) -> String {
        let norm = self.row_normalized();
        self.csv_with(|i, j| format!("{:.2}", norm[i][j]))
    }
}

/// Metrics of one classifier trained and tested at both granularities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityComparison {
    pub method: String,
    pub setup: MetricsReport,
    pub session: MetricsReport,
}

/// Runs the same train-and-evaluate procedure on setup-level and
/// session-level data. `run` receives a granularity's data and returns the
/// (truths, predictions) of its test split.
pub fn compare_granularity<D, E>(
    method: &str,
    setup_data: &D,
    session_data: &D,
    mut run: impl FnMut(&D) -> Result<(Vec<usize>, Vec<usize>), E>,
) -> Result<GranularityComparison, E>
where
    E: From<EvaluationError>,
{
    let (t, p) = run(setup_data)?;
    let setup = compute_metrics(&t, &p)?;
    let (t, p) = run(session_data)?;
    let session = compute_metrics(&t, &p)?;
    Ok(GranularityComparison { method: method.to_string(), setup, session })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub method: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub n: usize,
}

pub const MIN_LATENCY_SAMPLES: usize = 100;

/// Times `identify(i)` for `i` in `0..samples`, `repetitions` rounds, after
/// one untimed warm-up round. Runs on the calling thread only.
pub fn benchmark_inference(
    method: &str,
    samples: usize,
    repetitions: usize,
    mut identify: impl FnMut(usize),
) -> Result<LatencyReport, EvaluationError> {
    if samples < MIN_LATENCY_SAMPLES {
        return Err(EvaluationError::TooFewSamples { min: MIN_LATENCY_SAMPLES, got: samples });
    }
    for i in 0..samples {
        identify(i);
    }
    let mut times = Vec::with_capacity(samples * repetitions.max(1));
    for _ in 0..repetitions.max(1) {
        for i in 0..samples {
            let start = Instant::now();
            identify(i);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(LatencyReport { method: method.to_string(), mean_ms: mean, std_ms: var.sqrt(), n: times.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_example() {
        let r = compute_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.per_class[0].precision, 1.0);
        assert_eq!(r.per_class[0].recall, 0.5);
        assert!((r.per_class[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].recall, 1.0);
        assert!((r.macro_precision - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.macro_recall, 0.75);
    }

    #[test]
    fn absent_classes_are_excluded_and_errors() {
        let r = compute_metrics(&[0, 3], &[0, 3]).unwrap();
        assert_eq!(r.per_class.len(), 2);
        assert_eq!((r.accuracy, r.macro_precision, r.macro_recall), (1.0, 1.0, 1.0));
        assert_eq!(compute_metrics(&[], &[]), Err(EvaluationError::Empty));
        assert!(matches!(compute_metrics(&[0], &[]), Err(EvaluationError::LengthMismatch { .. })));
    }

    #[test]
    fn confusion_formats() {
        let classes: Vec<String> = ["DoorSensor", "Plug"].iter().map(|s| s.to_string()).collect();
        let m = confusion(&[0, 0, 0, 1], &[0, 0, 1, 1], &classes).unwrap();
        assert_eq!(m.counts, vec![vec![2, 1], vec![0, 1]]);
        assert_eq!(m.to_csv(), "true\\predicted,DoorSensor,Plug\nDoorSensor,2,1\nPlug,0,1\n");
        assert_eq!(m.to_normalized_csv(), "true\\predicted,DoorSensor,Plug\nDoorSensor,0.67,0.33\nPlug,0.00,1.00\n");
        assert_eq!(m.accuracy(), 0.75);
        assert!(matches!(confusion(&[2], &[0], &classes), Err(EvaluationError::UnknownLabel(2))));
        let diag = confusion(&[0, 1], &[0, 1], &classes).unwrap();
        assert_eq!(diag.counts, vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn latency_report() {
        assert!(matches!(benchmark_inference("x", 10, 1, |_| {}), Err(EvaluationError::TooFewSamples { .. })));
        let mut calls = 0;
        let r = benchmark_inference("x", 100, 2, |_| calls += 1).unwrap();
        assert_eq!(calls, 300);
        assert_eq!(r.n, 200);
        assert!(r.std_ms >= 0.0 && r.mean_ms >= 0.0);
    }

    #[test]
    fn identical_granularity_inputs_give_identical_reports() {
        let data = (vec![0usize, 1, 1], vec![0usize, 1, 0]);
        let cmp = compare_granularity::<_, EvaluationError>("m", &data, &data, |d| Ok(d.clone())).unwrap();
        assert_eq!(cmp.setup, cmp.session);
    }

    proptest! {
        #[test]
        fn self_comparison_is_perfect(t in prop::collection::vec(0usize..6, 1..60)) {
            let r = compute_metrics(&t, &t).unwrap();
            prop_assert_eq!((r.accuracy, r.macro_precision, r.macro_recall), (1.0, 1.0, 1.0));
        }

        #[test]
        fn matrix_identities(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let classes: Vec<String> = (0..4).map(|i| i.to_string()).collect();
            let m = confusion(&t, &p, &classes).unwrap();
            prop_assert_eq!(m.total() as usize, t.len());
            let r = compute_metrics(&t, &p).unwrap();
            prop_assert!((m.accuracy() - r.accuracy).abs() < 1e-12);
            for c in 0..4 {
                let col: u64 = m.counts.iter().map(|row| row[c]).sum();
                prop_assert_eq!(col as usize, p.iter().filter(|&&x| x == c).count());
            }
            for row in m.row_normalized() {
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn joint_shuffle_invariance(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..50), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (t1, p1): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let (t2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            let a = compute_metrics(&t1, &p1).unwrap();
            let b = compute_metrics(&t2, &p2).unwrap();
            prop_assert_eq!(a.per_class, b.per_class);
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
    }
}
