//! Flat `key = value` run configuration files.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: expected key=value")]
    Syntax { path: String, line: usize },
    #[error("{path}: unknown key {key:?}")]
    UnknownKey { path: String, key: String },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

pub const KEYS: [&str; 12] = [
    "manifest",
    "cache",
    "model",
    "granularity",
    "epochs",
    "batch",
    "lr",
    "tbptt_chunk",
    "dropout",
    "train_ratio",
    "seed",
    "out",
];

/// Blank lines and lines starting with `#` are skipped.
pub fn parse(text: &str, origin: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { path: origin.to_string(), line: i + 1 })?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { path: origin.to_string(), key });
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: origin.clone(), message: e.to_string() })?;
    parse(&text, &origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let m = parse("# run\nmodel = lstm\n\ntbptt-chunk=7\n", "c").unwrap();
        assert_eq!(m["model"], "lstm");
        assert_eq!(m["tbptt_chunk"], "7");
        assert_eq!(parse("model lstm", "c"), Err(ConfigError::Syntax { path: "c".into(), line: 1 }));
        assert!(matches!(parse("colour=red", "c"), Err(ConfigError::UnknownKey { .. })));
    }
}
