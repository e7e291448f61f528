//! Byte-image and byte-sequence model inputs, class weights, dataset splits,
//! the binary sample cache and the capture manifest.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

const CACHE_MAGIC: &[u8; 4] = b"IOTP";
const CACHE_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RepresentationError {
    #[error("input of {0} bytes exceeds the {IMAGE_LEN}-byte window")]
    InputTooLong(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("class {0:?} has zero samples")]
    ZeroCountClass(String),
    #[error("class {label} has {count} sample(s); at least 2 are needed to split")]
    ClassTooSmall { label: usize, count: usize },
    #[error("split ratio {0} is not in (0, 1)")]
    InvalidRatio(f64),
    #[error("corrupt sample cache: {0}")]
    CorruptCache(String),
    #[error("sample cache version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RepresentationError>;

/// 28×28 gray-value image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficImage {
    pixels: [u8; IMAGE_LEN],
}

impl TrafficImage {
    pub fn pixels(&self) -> &[u8; IMAGE_LEN] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Pixels scaled to [0, 1].
    pub fn normalized(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Places byte `i` at row `i / 28`, column `i % 28`; the rest stays black.
pub fn to_image(bytes: &[u8]) -> Result<TrafficImage> {
    if bytes.len() > IMAGE_LEN {
        return Err(RepresentationError::InputTooLong(bytes.len()));
    }
    let mut pixels = [0u8; IMAGE_LEN];
    pixels[..bytes.len()].copy_from_slice(bytes);
    Ok(TrafficImage { pixels })
}

/// How the 784 normalized bytes are cut into recurrent timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceLayout {
    /// 28 steps of one image row each.
    #[default]
    Rows28,
    /// 784 steps of a single byte.
    Scalar784,
}

impl SequenceLayout {
    pub fn steps(self) -> usize {
        match self {
            Self::Rows28 => IMAGE_SIDE,
            Self::Scalar784 => IMAGE_LEN,
        }
    }

    pub fn features(self) -> usize {
        IMAGE_LEN / self.steps()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByteSequence {
    pub layout: SequenceLayout,
    /// `steps × features`, step-major.
    pub values: Vec<f64>,
}

impl ByteSequence {
    pub fn step(&self, t: usize) -> &[f64] {
        let f = self.layout.features();
        &self.values[t * f..(t + 1) * f]
    }
}

pub fn to_sequence(image: &TrafficImage) -> ByteSequence {
    to_sequence_with(image, SequenceLayout::Rows28)
}

pub fn to_sequence_with(image: &TrafficImage, layout: SequenceLayout) -> ByteSequence {
    // Both layouts are the same row-major buffer; only the step width differs.
    ByteSequence { layout, values: image.normalized() }
}

/// Source bytes of one sample plus its class index and origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    /// At most 784 bytes.
    pub bytes: Vec<u8>,
    pub label: usize,
    pub setup_id: String,
    pub session_index: usize,
}

impl LabeledSample {
    pub fn image(&self) -> TrafficImage {
        to_image(&self.bytes[..self.bytes.len().min(IMAGE_LEN)]).expect("length checked")
    }
}

/// `w_d = max_N / n_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub by_type: BTreeMap<String, f64>,
}

impl ClassWeights {
    /// Weights in the order of `class_names`; unknown names get weight 1.
    pub fn for_classes(&self, class_names: &[String]) -> Vec<f64> {
        class_names.iter().map(|n| self.by_type.get(n).copied().unwrap_or(1.0)).collect()
    }
}

pub fn compute_class_weights(counts: &BTreeMap<String, usize>) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(RepresentationError::EmptyDataset);
    }
    if let Some((name, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(RepresentationError::ZeroCountClass(name.clone()));
    }
    let max = *counts.values().max().unwrap() as f64;
    let by_type = counts.iter().map(|(k, &n)| (k.clone(), max / n as f64)).collect();
    Ok(ClassWeights { by_type })
}

/// Weights by class index from sample labels; classes without samples get 1.
pub fn class_weights_from_labels(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let max = *counts.iter().max().ok_or(RepresentationError::EmptyDataset)?;
    if max == 0 {
        return Err(RepresentationError::EmptyDataset);
    }
    Ok(counts.iter().map(|&n| if n == 0 { 1.0 } else { max as f64 / n as f64 }).collect())
}

/// Stratified split: each class contributes `round(ratio · n)` samples to the
/// training side, clamped so both sides keep at least one. Output preserves
/// input order.
pub fn split_dataset(
    samples: &[LabeledSample],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(RepresentationError::InvalidRatio(ratio));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; samples.len()];
    for (&label, indices) in &by_class {
        if indices.len() < 2 {
            return Err(RepresentationError::ClassTooSmall { label, count: indices.len() });
        }
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        let n_train = ((ratio * indices.len() as f64).round() as usize).clamp(1, indices.len() - 1);
        for &i in &shuffled[..n_train] {
            in_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = samples.iter().zip(&in_train).partition(|(_, &t)| t);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        test.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}

/// Header plus fixed-size records; origins are not stored, so samples read
/// back carry an empty `setup_id` and their record index.
pub fn write_sample_cache<W: Write>(mut w: W, samples: &[LabeledSample], n_classes: usize) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    w.write_all(&(n_classes as u16).to_le_bytes())?;
    w.write_all(&[0u8; 4])?;
    let mut record = [0u8; 4 + IMAGE_LEN];
    for s in samples {
        if s.bytes.len() > IMAGE_LEN {
            return Err(RepresentationError::InputTooLong(s.bytes.len()));
        }
        record.fill(0);
        record[0..2].copy_from_slice(&(s.label as u16).to_le_bytes());
        record[2..4].copy_from_slice(&(s.bytes.len() as u16).to_le_bytes());
        record[4..4 + s.bytes.len()].copy_from_slice(&s.bytes);
        w.write_all(&record)?;
    }
    Ok(())
}

/// Returns the samples and the class count from the header.
pub fn read_sample_cache<R: Read>(mut r: R) -> Result<(Vec<LabeledSample>, usize)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| RepresentationError::CorruptCache("short header".into()))?;
    if &header[0..4] != CACHE_MAGIC {
        return Err(RepresentationError::CorruptCache("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != CACHE_VERSION {
        return Err(RepresentationError::VersionMismatch { expected: CACHE_VERSION, found: version });
    }
    let count = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let n_classes = u16::from_le_bytes([header[10], header[11]]) as usize;
    let mut samples = Vec::with_capacity(count);
    let mut record = [0u8; 4 + IMAGE_LEN];
    for i in 0..count {
        r.read_exact(&mut record)
            .map_err(|_| RepresentationError::CorruptCache(format!("record {i} truncated")))?;
        let label = u16::from_le_bytes([record[0], record[1]]) as usize;
        let len = u16::from_le_bytes([record[2], record[3]]) as usize;
        if len > IMAGE_LEN || label >= n_classes.max(1) {
            return Err(RepresentationError::CorruptCache(format!("record {i} out of range")));
        }
        samples.push(LabeledSample {
            bytes: record[4..4 + len].to_vec(),
            label,
            setup_id: String::new(),
            session_index: i,
        });
    }
    Ok((samples, n_classes))
}

pub fn save_sample_cache(path: &Path, samples: &[LabeledSample], n_classes: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + samples.len() * (4 + IMAGE_LEN));
    write_sample_cache(&mut buf, samples, n_classes)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_sample_cache(path: &Path) -> Result<(Vec<LabeledSample>, usize)> {
    read_sample_cache(io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pcap_path: PathBuf,
    pub device_type: String,
    pub setup_id: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(entries)?)?;
    Ok(())
}

/// Sorted distinct device types; the index of a name is its class id.
pub fn class_names(entries: &[ManifestEntry]) -> Vec<String> {
    let mut names: Vec<String> = entries.iter().map(|e| e.device_type.clone()).collect();
    names.sort();
    names.dedup();
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(label: usize, i: usize) -> LabeledSample {
        LabeledSample { bytes: vec![label as u8, i as u8], label, setup_id: format!("s{i}"), session_index: i }
    }

    #[test]
    fn image_padding_and_placement() {
        assert!(to_image(&[]).unwrap().pixels().iter().all(|&p| p == 0));
        assert!(to_image(&[255; 784]).unwrap().pixels().iter().all(|&p| p == 255));
        let bytes: Vec<u8> = (0..100).map(|i| i as u8 + 1).collect();
        let img = to_image(&bytes).unwrap();
        for i in 0..IMAGE_LEN {
            let expected = if i < 100 { i as u8 + 1 } else { 0 };
            assert_eq!(img.pixel(i / 28, i % 28), expected);
        }
        assert!(matches!(to_image(&[0; 785]), Err(RepresentationError::InputTooLong(785))));
    }

    #[test]
    fn sequence_rows() {
        let seq = to_sequence(&to_image(&[]).unwrap());
        assert_eq!(seq.values.len(), 784);
        assert!(seq.values.iter().all(|&v| v == 0.0));
        let seq = to_sequence(&to_image(&[255]).unwrap());
        assert_eq!(seq.step(0)[0], 1.0);
        assert_eq!(seq.step(0).len(), 28);
        let scalar = to_sequence_with(&to_image(&[0, 255]).unwrap(), SequenceLayout::Scalar784);
        assert_eq!(scalar.step(1), &[1.0]);
        assert_eq!(SequenceLayout::Scalar784.steps(), 784);
    }

    #[test]
    fn class_weights_from_session_counts() {
        let counts: BTreeMap<String, usize> =
            [("HueBridge".to_string(), 3677), ("HomeMaticPlug".to_string(), 20), ("Aria".to_string(), 500)]
                .into();
        let w = compute_class_weights(&counts).unwrap();
        assert_eq!(w.by_type["HueBridge"], 1.0);
        assert_eq!(w.by_type["HomeMaticPlug"], 183.85);
        for (k, n) in &counts {
            assert!((w.by_type[k] * *n as f64 - 3677.0).abs() < 1e-9);
        }
        let equal: BTreeMap<String, usize> = [("a".into(), 5), ("b".into(), 5)].into();
        assert!(compute_class_weights(&equal).unwrap().by_type.values().all(|&v| v == 1.0));
        assert!(matches!(compute_class_weights(&BTreeMap::new()), Err(RepresentationError::EmptyDataset)));
        let zero: BTreeMap<String, usize> = [("a".into(), 0)].into();
        assert!(matches!(compute_class_weights(&zero), Err(RepresentationError::ZeroCountClass(_))));
        assert_eq!(class_weights_from_labels(&[0, 0, 0, 1], 3).unwrap(), vec![1.0, 3.0, 1.0]);
    }

    #[test]
    fn split_counts_and_determinism() {
        let samples: Vec<_> = (0..10).map(|i| sample(0, i)).collect();
        let (train, test) = split_dataset(&samples, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(split_dataset(&samples, 0.8, 1).unwrap(), (train, test));
        assert!(matches!(
            split_dataset(&[sample(0, 0)], 0.8, 1),
            Err(RepresentationError::ClassTooSmall { label: 0, count: 1 })
        ));
        assert!(matches!(split_dataset(&samples, 1.0, 1), Err(RepresentationError::InvalidRatio(_))));
    }

    #[test]
    fn split_is_stratified_over_many_classes() {
        let mut samples = Vec::new();
        let mut idx = 0;
        for class in 0..27 {
            for _ in 0..(2 + class * 3) {
                samples.push(sample(class, idx));
                idx += 1;
            }
        }
        let (train, test) = split_dataset(&samples, 0.8, 9).unwrap();
        for class in 0..27 {
            let n = 2 + class * 3;
            let t = train.iter().filter(|s| s.label == class).count();
            assert!((t as f64 - 0.8 * n as f64).abs() <= 1.0, "class {class}: {t} of {n}");
        }
        let mut all: Vec<_> = train.iter().chain(&test).map(|s| s.session_index).collect();
        all.sort();
        assert_eq!(all, (0..samples.len()).collect::<Vec<_>>());
    }

    #[test]
    fn cache_rejects_bad_input() {
        assert!(matches!(read_sample_cache(&b"NOPE"[..]), Err(RepresentationError::CorruptCache(_))));
        let mut buf = Vec::new();
        write_sample_cache(&mut buf, &[sample(1, 0)], 2).unwrap();
        assert_eq!(buf.len(), 16 + 788);
        let mut wrong = buf.clone();
        wrong[4] = 9;
        assert!(matches!(read_sample_cache(&wrong[..]), Err(RepresentationError::VersionMismatch { .. })));
        buf.truncate(100);
        assert!(matches!(read_sample_cache(&buf[..]), Err(RepresentationError::CorruptCache(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let entries = vec![
            ManifestEntry { pcap_path: "b.pcap".into(), device_type: "Plug".into(), setup_id: "1".into() },
            ManifestEntry { pcap_path: "a.pcap".into(), device_type: "Cam".into(), setup_id: "2".into() },
        ];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
        assert_eq!(class_names(&entries), vec!["Cam".to_string(), "Plug".to_string()]);
    }

    proptest! {
        #[test]
        fn image_is_injective_for_fixed_length(a in prop::collection::vec(any::<u8>(), 0..784), flip in any::<prop::sample::Index>()) {
            prop_assume!(!a.is_empty());
            let mut b = a.clone();
            let i = flip.index(a.len());
            b[i] = b[i].wrapping_add(1);
            prop_assert_ne!(to_image(&a).unwrap(), to_image(&b).unwrap());
        }

        #[test]
        fn sequence_times_255_is_the_image(bytes in prop::collection::vec(any::<u8>(), 0..=784)) {
            let img = to_image(&bytes).unwrap();
            let seq = to_sequence(&img);
            let back: Vec<u8> = seq.values.iter().map(|v| (v * 255.0).round() as u8).collect();
            prop_assert_eq!(&back[..], &img.pixels()[..]);
        }

        #[test]
        fn cache_round_trip(records in prop::collection::vec((0usize..5, prop::collection::vec(any::<u8>(), 0..=784)), 0..20)) {
            let samples: Vec<LabeledSample> = records
                .into_iter()
                .enumerate()
                .map(|(i, (label, bytes))| LabeledSample { bytes, label, setup_id: String::new(), session_index: i })
                .collect();
            let mut buf = Vec::new();
            write_sample_cache(&mut buf, &samples, 5).unwrap();
            let (back, n) = read_sample_cache(&buf[..]).unwrap();
            prop_assert_eq!(n, 5);
            prop_assert_eq!(back, samples);
        }
    }
}
