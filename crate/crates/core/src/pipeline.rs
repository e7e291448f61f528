//! End-to-end commands: ingest a manifest of captures into samples, train,
//! evaluate, benchmark and explain, each writing its artifacts and a
//! run-metadata record into an output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evaluation::{
    benchmark_inference, compute_metrics, confusion, EvaluationError, LatencyReport, MetricsReport,
};
use crate::explain::{
    aggregate_importance, expected_gradients, importance_report, stratified_background, ExplainError,
    ImportanceSummary,
};
use crate::ingest::{parse_packet, read_pcap, ParsedPacket, PcapError};
use crate::models::{self, CnnModel, LstmModel, Model, ModelError, TensorData, TrainConfig, TrainingHistory};
use crate::representation::{
    class_names, class_weights_from_labels, load_sample_cache, read_manifest, save_sample_cache, split_dataset,
    LabeledSample, ManifestEntry, RepresentationError,
};
use crate::sentinel::{extract_fingerprint, BaselineClassifier, BaselineConfig, BaselineError, Fingerprint};
use crate::session::{
    assemble_sessions, dedup_sessions, drop_empty_sessions, filter_packets, sanitize, session_bytes,
    Session, SESSION_BYTE_LIMIT,
};
use crate::synth::{generate_corpus, DeviceProfile, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Capture { path: PathBuf, source: PcapError },
    #[error("{} of {total} captures failed:\n{}", failures.len(), failures.join("\n"))]
    Ingest { failures: Vec<String>, total: usize },
    #[error(transparent)]
    Representation(#[from] RepresentationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// 2 for bad input or usage, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput(_)
            | PipelineError::Usage(_)
            | PipelineError::Capture { .. }
            | PipelineError::Ingest { .. } => 2,
            PipelineError::Representation(RepresentationError::Io(_) | RepresentationError::Manifest(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One sample per bidirectional session.
    Session,
    /// One sample per setup capture.
    Setup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cnn,
    Lstm,
    Baseline,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = PipelineError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(PipelineError::Usage(format!("unknown {} {other:?}", stringify!($ty).to_lowercase()))),
                }
            }
        }
    };
}

text_enum!(Granularity { Session => "session", Setup => "setup" });
text_enum!(ModelKind { Cnn => "cnn", Lstm => "lstm", Baseline => "baseline" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub model: ModelKind,
    pub granularity: Granularity,
    pub train: TrainConfig,
    pub train_ratio: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            cache: None,
            model: ModelKind::Cnn,
            granularity: Granularity::Session,
            train: TrainConfig::default(),
            train_ratio: 0.8,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.clone().ok_or_else(|| PipelineError::Usage(format!("--{what} is required")))?;
    if !p.exists() {
        return Err(PipelineError::MissingInput(p));
    }
    Ok(p)
}

/// Manifest entries with capture paths resolved against the manifest's
/// directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = read_manifest(path)?;
    for e in &mut entries {
        if e.pcap_path.is_relative() {
            e.pcap_path = base.join(&e.pcap_path);
        }
    }
    Ok(entries)
}

pub fn load_capture(path: &Path) -> Result<Vec<ParsedPacket>> {
    let capture = read_pcap(path).map_err(|source| PipelineError::Capture { path: path.to_path_buf(), source })?;
    Ok(capture.packets.iter().map(parse_packet).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutput {
    pub samples: Vec<LabeledSample>,
    pub class_names: Vec<String>,
    /// Samples per device type after deduplication.
    pub counts: BTreeMap<String, usize>,
    pub duplicates_removed: usize,
}

/// parse → sanitize → filter → sessions (or whole setup) → drop empty →
/// global dedup → first 784 payload bytes.
pub fn ingest(entries: &[ManifestEntry], granularity: Granularity, sanitize_seed: u64) -> Result<IngestOutput> {
    let names = class_names(entries);
    let mut units: Vec<Session> = Vec::new();
    let mut failures = Vec::new();
    for entry in entries {
        let packets = match load_capture(&entry.pcap_path) {
            Ok(p) => p,
            Err(e) => {
                failures.push(e.to_string());
                continue;
            }
        };
        let (clean, _) = sanitize(&packets, sanitize_seed);
        let kept = filter_packets(&clean);
        let mut found = match granularity {
            Granularity::Session => assemble_sessions(&kept),
            Granularity::Setup => match kept.iter().find_map(crate::session::SessionKey::of) {
                Some(key) => vec![Session { key, packets: kept, label: None, setup_id: String::new() }],
                None => Vec::new(),
            },
        };
        for s in &mut found {
            s.label = Some(entry.device_type.clone());
            s.setup_id = entry.setup_id.clone();
        }
        units.extend(drop_empty_sessions(found));
    }
    if !failures.is_empty() {
        return Err(PipelineError::Ingest { failures, total: entries.len() });
    }
    let before = units.len();
    let units = dedup_sessions(units);
    let mut counts: BTreeMap<String, usize> = names.iter().map(|n| (n.clone(), 0)).collect();
    let mut per_setup: BTreeMap<String, usize> = BTreeMap::new();
    let samples = units
        .iter()
        .map(|s| {
            let label = s.label.as_deref().unwrap();
            *counts.get_mut(label).unwrap() += 1;
            let index = per_setup.entry(s.setup_id.clone()).or_default();
            *index += 1;
            LabeledSample {
                bytes: session_bytes(s, SESSION_BYTE_LIMIT),
                label: names.binary_search_by(|n| n.as_str().cmp(label)).unwrap(),
                setup_id: s.setup_id.clone(),
                session_index: *index - 1,
            }
        })
        .collect();
    Ok(IngestOutput { samples, class_names: names, counts, duplicates_removed: before - units.len() })
}

/// Unsanitized fingerprints of the full captures, labeled with their type.
pub fn baseline_fingerprints(entries: &[ManifestEntry]) -> Result<Vec<Fingerprint>> {
    entries
        .iter()
        .map(|e| {
            let mut fp = extract_fingerprint(&load_capture(&e.pcap_path)?);
            fp.label = Some(e.device_type.clone());
            Ok(fp)
        })
        .collect()
}

/// The same stratified split the neural models use, applied to captures.
pub fn split_entries(entries: &[ManifestEntry], ratio: f64, seed: u64) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>)> {
    let names = class_names(entries);
    let proxies: Vec<LabeledSample> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| LabeledSample {
            bytes: Vec::new(),
            label: names.binary_search(&e.device_type).unwrap(),
            setup_id: String::new(),
            session_index: i,
        })
        .collect();
    let (train, test) = split_dataset(&proxies, ratio, seed)?;
    let pick = |side: Vec<LabeledSample>| side.iter().map(|s| entries[s.session_index].clone()).collect();
    Ok((pick(train), pick(test)))
}

/// Sha-256 over the given files' bytes, each preceded by its length.
pub fn content_hash(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub input_hash: String,
    pub version: String,
}

pub fn write_run_metadata(command: &str, config: &RunConfig, inputs: &[PathBuf]) -> Result<RunMetadata> {
    let meta = RunMetadata {
        command: command.to_string(),
        seed: config.seed,
        config: config.clone(),
        inputs: inputs.to_vec(),
        input_hash: content_hash(inputs)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    std::fs::create_dir_all(&config.out)?;
    std::fs::write(config.out.join(format!("{command}_run.json")), serde_json::to_string_pretty(&meta)?)?;
    Ok(meta)
}

fn manifest_inputs(manifest: &Path, entries: &[ManifestEntry]) -> Vec<PathBuf> {
    std::iter::once(manifest.to_path_buf()).chain(entries.iter().map(|e| e.pcap_path.clone())).collect()
}

pub fn cmd_generate(profiles: &[DeviceProfile], setups_per_device: usize, seed: u64, out: &Path) -> Result<Vec<ManifestEntry>> {
    let entries = generate_corpus(profiles, setups_per_device, seed, out)?;
    let meta = serde_json::json!({
        "command": "generate",
        "seed": seed,
        "setups_per_device": setups_per_device,
        "profiles": profiles,
    });
    std::fs::write(out.join("generate_run.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(entries)
}

/// Ingests the manifest into the sample cache at `config.cache`.
pub fn cmd_ingest(config: &RunConfig) -> Result<IngestOutput> {
    let manifest = require(&config.manifest, "manifest")?;
    let cache = config.cache.clone().ok_or_else(|| PipelineError::Usage("--cache is required".into()))?;
    let entries = load_manifest(&manifest)?;
    if entries.is_empty() {
        log::warn!("manifest {} lists no captures; writing an empty cache", manifest.display());
    }
    let output = ingest(&entries, config.granularity, config.seed)?;
    if let Some(dir) = cache.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_sample_cache(&cache, &output.samples, output.class_names.len())?;
    write_run_metadata("ingest", config, &manifest_inputs(&manifest, &entries))?;
    Ok(output)
}

/// Samples, class count, class names and the input files they came from.
fn neural_dataset(config: &RunConfig) -> Result<(Vec<LabeledSample>, usize, Vec<String>, Vec<PathBuf>)> {
    let manifest = match &config.manifest {
        Some(_) => Some(require(&config.manifest, "manifest")?),
        None => None,
    };
    let entries = match &manifest {
        Some(m) => Some(load_manifest(m)?),
        None => None,
    };
    match (&config.cache, entries) {
        (Some(cache), entries) if cache.exists() => {
            let (samples, n) = load_sample_cache(cache)?;
            let names = match entries {
                Some(e) => class_names(&e),
                None => (0..n).map(|i| format!("class_{i}")).collect(),
            };
            Ok((samples, n, names, vec![cache.clone()]))
        }
        (Some(cache), None) => Err(PipelineError::MissingInput(cache.clone())),
        (_, Some(entries)) => {
            let out = ingest(&entries, config.granularity, config.seed)?;
            let n = out.class_names.len();
            Ok((out.samples, n, out.class_names, manifest_inputs(manifest.as_ref().unwrap(), &entries)))
        }
        (None, None) => Err(PipelineError::Usage("either --cache or --manifest is required".into())),
    }
}

fn neural_split(config: &RunConfig) -> Result<(TensorData, TensorData, usize, Vec<String>, Vec<PathBuf>)> {
    let (samples, n, names, inputs) = neural_dataset(config)?;
    let (train, test) = split_dataset(&samples, config.train_ratio, config.seed)?;
    Ok((TensorData::from_samples(&train), TensorData::from_samples(&test), n, names, inputs))
}

pub fn checkpoint_path(config: &RunConfig) -> PathBuf {
    match config.model {
        ModelKind::Baseline => config.out.join("baseline.json"),
        kind => config.out.join(format!("{kind}.iotm")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: Option<TrainingHistory>,
}

pub fn build_model(kind: ModelKind, n_classes: usize, seed: u64) -> Result<Model> {
    Ok(match kind {
        ModelKind::Cnn => Model::Cnn(CnnModel::build(n_classes, seed)?),
        ModelKind::Lstm => Model::Lstm(LstmModel::build(n_classes, seed)?),
        ModelKind::Baseline => return Err(PipelineError::Usage("the baseline is not a neural model".into())),
    })
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    cmd_train_with_progress(config, |_| {})
}

pub fn cmd_train_with_progress(config: &RunConfig, on_epoch: impl FnMut(&models::EpochRecord)) -> Result<TrainOutcome> {
    std::fs::create_dir_all(&config.out)?;
    let checkpoint = checkpoint_path(config);
    if config.model == ModelKind::Baseline {
        let manifest = require(&config.manifest, "manifest")?;
        let entries = load_manifest(&manifest)?;
        let (train, _) = split_entries(&entries, config.train_ratio, config.seed)?;
        let clf = BaselineClassifier::train(
            &baseline_fingerprints(&train)?,
            BaselineConfig { seed: config.seed, ..Default::default() },
        )?;
        std::fs::write(&checkpoint, clf.to_json())?;
        write_run_metadata("train", config, &manifest_inputs(&manifest, &entries))?;
        return Ok(TrainOutcome { checkpoint, history: None });
    }
    let (train, test, n, _, inputs) = neural_split(config)?;
    let mut model = build_model(config.model, n, config.seed)?;
    let train_config = TrainConfig {
        seed: config.seed,
        class_weights: Some(class_weights_from_labels(&train.labels, n)?),
        ..config.train.clone()
    };
    let history = models::train_with_progress(model.as_dyn_mut(), &train, Some(&test), &train_config, on_epoch)?;
    model.save(&checkpoint)?;
    history.write_csv(&config.out.join(format!("{}_history.csv", config.model)))?;
    write_run_metadata("train", config, &inputs)?;
    Ok(TrainOutcome { checkpoint, history: Some(history) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: ModelKind,
    pub granularity: Granularity,
    pub class_names: Vec<String>,
    pub metrics: MetricsReport,
}

fn require_checkpoint(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

/// (truths, predictions, class names, inputs) on the test split.
fn test_predictions(config: &RunConfig, checkpoint: &Path) -> Result<(Vec<usize>, Vec<usize>, Vec<String>, Vec<PathBuf>)> {
    require_checkpoint(checkpoint)?;
    if config.model == ModelKind::Baseline {
        let manifest = require(&config.manifest, "manifest")?;
        let entries = load_manifest(&manifest)?;
        let names = class_names(&entries);
        let clf = BaselineClassifier::from_json(&std::fs::read_to_string(checkpoint)?)?;
        let (_, test) = split_entries(&entries, config.train_ratio, config.seed)?;
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for fp in baseline_fingerprints(&test)? {
            truths.push(names.binary_search(fp.label.as_ref().unwrap()).unwrap());
            let predicted = clf.predict(&fp);
            preds.push(names.binary_search(&predicted).map_err(|_| BaselineError::UnknownType(predicted))?);
        }
        let mut inputs = manifest_inputs(&manifest, &entries);
        inputs.push(checkpoint.to_path_buf());
        return Ok((truths, preds, names, inputs));
    }
    let model = Model::load(checkpoint)?;
    let (_, test, _, names, mut inputs) = neural_split(config)?;
    let preds = models::predict(model.as_dyn(), &test)?.into_iter().map(|(p, _)| p).collect();
    inputs.push(checkpoint.to_path_buf());
    Ok((test.labels, preds, names, inputs))
}

pub fn cmd_eval(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let (truths, preds, names, inputs) = test_predictions(config, checkpoint)?;
    let metrics = compute_metrics(&truths, &preds)?;
    let matrix = confusion(&truths, &preds, &names)?;
    let report = EvalReport { method: config.model, granularity: config.granularity, class_names: names, metrics };
    std::fs::create_dir_all(&config.out)?;
    let stem = format!("{}_{}", config.model, config.granularity);
    std::fs::write(config.out.join(format!("{stem}_metrics.json")), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(config.out.join(format!("{stem}_confusion.csv")), matrix.to_csv())?;
    std::fs::write(config.out.join(format!("{stem}_confusion_normalized.csv")), matrix.to_normalized_csv())?;
    write_run_metadata("eval", config, &inputs)?;
    Ok(report)
}

/// Per-sample identification latency of every supplied checkpoint over the
/// test split, cycling through it until at least 100 samples are timed.
/// Neural timings include image conversion; baseline timings include
/// fingerprint extraction from parsed packets.
pub fn cmd_bench(config: &RunConfig, checkpoints: &[(ModelKind, PathBuf)], repetitions: usize) -> Result<Vec<LatencyReport>> {
    let mut reports = Vec::new();
    let mut inputs = Vec::new();
    let samples = crate::evaluation::MIN_LATENCY_SAMPLES;
    for (kind, path) in checkpoints {
        require_checkpoint(path)?;
        inputs.push(path.clone());
        let report = if *kind == ModelKind::Baseline {
            let manifest = require(&config.manifest, "manifest")?;
            let entries = load_manifest(&manifest)?;
            let clf = BaselineClassifier::from_json(&std::fs::read_to_string(path)?)?;
            let (_, test) = split_entries(&entries, config.train_ratio, config.seed)?;
            let captures: Vec<Vec<ParsedPacket>> = test.iter().map(|e| load_capture(&e.pcap_path)).collect::<Result<_>>()?;
            benchmark_inference("baseline", samples, repetitions, |i| {
                let fp = extract_fingerprint(&captures[i % captures.len()]);
                std::hint::black_box(clf.predict(&fp));
            })?
        } else {
            let model = Model::load(path)?;
            let (samples_all, _, _, _) = neural_dataset(config)?;
            let (_, test) = split_dataset(&samples_all, config.train_ratio, config.seed)?;
            let net = model.as_dyn();
            let mut failure = None;
            let r = benchmark_inference(&kind.to_string(), samples, repetitions, |i| {
                let x = test[i % test.len()].image().normalized();
                if let Err(e) = net.predict_proba(&x, 1).map(std::hint::black_box) {
                    failure.get_or_insert(e);
                }
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            r
        };
        reports.push(report);
    }
    std::fs::create_dir_all(&config.out)?;
    std::fs::write(config.out.join("latency.json"), serde_json::to_string_pretty(&reports)?)?;
    write_run_metadata("bench", config, &inputs)?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub samples: usize,
    pub draws: usize,
    pub background: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self { samples: 32, draws: 256, background: 64 }
    }
}

pub fn cmd_explain(config: &RunConfig, checkpoint: &Path, options: ExplainOptions) -> Result<ImportanceSummary> {
    require_checkpoint(checkpoint)?;
    if config.model == ModelKind::Baseline {
        return Err(PipelineError::Usage("attribution needs a neural model".into()));
    }
    let model = Model::load(checkpoint)?;
    let (train, test, _, _, mut inputs) = neural_split(config)?;
    let background = stratified_background(&train, options.background, config.seed);
    let mut maps = Vec::new();
    for i in 0..options.samples.min(test.len()) {
        let mut map = expected_gradients(&model, test.row(i), &background, options.draws, config.seed.wrapping_add(i as u64))?;
        map.origin = format!("test[{i}]");
        maps.push(map);
    }
    let summary = aggregate_importance(&maps)?;
    importance_report(&summary, &config.out)?;
    inputs.push(checkpoint.to_path_buf());
    write_run_metadata("explain", config, &inputs)?;
    Ok(summary)
}
