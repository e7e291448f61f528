//! `iotid`: generate synthetic setup captures, ingest them into byte
//! samples, and train, evaluate, benchmark and explain device-type
//! classifiers.

mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use iotid_core::pipeline::{
    checkpoint_path, cmd_bench, cmd_eval, cmd_explain, cmd_generate, cmd_ingest, cmd_train_with_progress,
    ExplainOptions, Granularity, ModelKind, PipelineError, RunConfig,
};
use iotid_core::synth::{default_profiles, DeviceProfile};

#[derive(Parser)]
#[command(name = "iotid", version, about = "IoT device-type identification from setup traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic setup captures and a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        setups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON list of device profiles; the built-in eight otherwise.
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Turn the captures of a manifest into a sample cache.
    Ingest(RunArgs),
    /// Train a model and write its checkpoint and history.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the checkpoint `train` writes into --out.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-sample identification latency.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// KIND=PATH, repeatable; defaults to every checkpoint found in --out.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
    },
    /// Byte-importance maps via expected gradients.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[arg(long, default_value_t = 256)]
        draws: usize,
        #[arg(long, default_value_t = 64)]
        background: usize,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// cnn, lstm or baseline
    #[arg(long)]
    model: Option<String>,
    /// session or setup
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Timesteps per chunk, or `none` for full-sequence backpropagation.
    #[arg(long)]
    tbptt_chunk: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn value<T: FromStr>(key: &str, text: &str) -> Result<T, PipelineError> {
    text.parse().map_err(|_| PipelineError::Usage(format!("invalid value {text:?} for {key}")))
}

fn chunk(text: &str) -> Result<Option<usize>, PipelineError> {
    match text {
        "none" | "full" => Ok(None),
        n => value("tbptt_chunk", n).map(Some),
    }
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut entries = match &self.config {
            Some(path) => config::load(path).map_err(|e| PipelineError::Usage(e.to_string()))?,
            None => BTreeMap::new(),
        };
        let mut set = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                entries.insert(key.to_string(), v);
            }
        };
        set("manifest", self.manifest.as_ref().map(|p| p.display().to_string()));
        set("cache", self.cache.as_ref().map(|p| p.display().to_string()));
        set("model", self.model.clone());
        set("granularity", self.granularity.clone());
        set("epochs", self.epochs.map(|v| v.to_string()));
        set("batch", self.batch.map(|v| v.to_string()));
        set("lr", self.lr.map(|v| v.to_string()));
        set("tbptt_chunk", self.tbptt_chunk.clone());
        set("dropout", self.dropout.map(|v| v.to_string()));
        set("train_ratio", self.train_ratio.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("out", self.out.as_ref().map(|p| p.display().to_string()));

        let mut c = RunConfig::default();
        for (k, v) in &entries {
            match k.as_str() {
                "manifest" => c.manifest = Some(PathBuf::from(v)),
                "cache" => c.cache = Some(PathBuf::from(v)),
                "model" => c.model = v.parse::<ModelKind>()?,
                "granularity" => c.granularity = v.parse::<Granularity>()?,
                "epochs" => c.train.epochs = value(k, v)?,
                "batch" => c.train.batch_size = value(k, v)?,
                "lr" => c.train.learning_rate = value(k, v)?,
                "tbptt_chunk" => c.train.tbptt_chunk = chunk(v)?,
                "dropout" => c.train.dropout = value(k, v)?,
                "train_ratio" => c.train_ratio = value(k, v)?,
                "seed" => c.seed = value(k, v)?,
                "out" => c.out = PathBuf::from(v),
                _ => unreachable!("keys are validated on load"),
            }
        }
        Ok(c)
    }
}

fn bench_checkpoints(run: &RunConfig, specs: &[String]) -> Result<Vec<(ModelKind, PathBuf)>, PipelineError> {
    if specs.is_empty() {
        let found: Vec<_> = [ModelKind::Cnn, ModelKind::Lstm, ModelKind::Baseline]
            .into_iter()
            .map(|kind| (kind, checkpoint_path(&RunConfig { model: kind, ..run.clone() })))
            .filter(|(_, p)| p.exists())
            .collect();
        if found.is_empty() {
            return Err(PipelineError::Usage(format!("no checkpoints in {}", run.out.display())));
        }
        return Ok(found);
    }
    specs
        .iter()
        .map(|s| {
            let (kind, path) = s
                .split_once('=')
                .ok_or_else(|| PipelineError::Usage(format!("expected KIND=PATH, got {s:?}")))?;
            Ok((kind.parse()?, PathBuf::from(path)))
        })
        .collect()
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate { out, setups, seed, profiles } => {
            let profiles: Vec<DeviceProfile> = match profiles {
                Some(path) => {
                    let text = std::fs::read(&path).map_err(|_| PipelineError::MissingInput(path.clone()))?;
                    serde_json::from_slice(&text)?
                }
                None => default_profiles(),
            };
            let entries = cmd_generate(&profiles, setups, seed, &out)?;
            println!("wrote {} captures and {}", entries.len(), out.join("manifest.json").display());
        }
        Command::Ingest(args) => {
            let config = args.resolve()?;
            let output = cmd_ingest(&config)?;
            println!("{:<24} {:>8}", "device type", config.granularity.to_string() + "s");
            for (name, n) in &output.counts {
                println!("{name:<24} {n:>8}");
            }
            println!("{} samples, {} duplicates removed", output.samples.len(), output.duplicates_removed);
        }
        Command::Train(args) => {
            let config = args.resolve()?;
            let outcome = cmd_train_with_progress(&config, |r| {
                log::info!(
                    "epoch {} loss {:.4} train {:.4} test {}",
                    r.epoch,
                    r.train_loss,
                    r.train_acc,
                    r.test_acc.map_or("-".into(), |a| format!("{a:.4}"))
                );
            })?;
            if let Some(acc) = outcome.history.as_ref().and_then(|h| h.final_test_accuracy()) {
                println!("final test accuracy {acc:.4}");
            }
            println!("checkpoint {}", outcome.checkpoint.display());
        }
        Command::Eval { run, checkpoint } => {
            let config = run.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| checkpoint_path(&config));
            let report = cmd_eval(&config, &checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&report.metrics)?);
        }
        Command::Bench { run, checkpoints, repetitions } => {
            let config = run.resolve()?;
            let checkpoints = bench_checkpoints(&config, &checkpoints)?;
            for r in cmd_bench(&config, &checkpoints, repetitions)? {
                println!("{:<9} {:>10.4} ms ± {:.4} (n={})", r.method, r.mean_ms, r.std_ms, r.n);
            }
        }
        Command::Explain { run, checkpoint, samples, draws, background } => {
            let config = run.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| checkpoint_path(&config));
            let summary = cmd_explain(&config, &checkpoint, ExplainOptions { samples, draws, background })?;
            println!("most important byte {} (row {}), peak rows {:?}", summary.max_index, summary.max_index / 28, summary.peak_rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "model=lstm\nepochs=5\ntbptt_chunk=none\nseed=3\n").unwrap();
        let args = RunArgs { config: Some(path), epochs: Some(9), ..Default::default() };
        let c = args.resolve().unwrap();
        assert_eq!(c.model, ModelKind::Lstm);
        assert_eq!(c.train.epochs, 9);
        assert_eq!(c.train.tbptt_chunk, None);
        assert_eq!(c.seed, 3);
        let bad = RunArgs { model: Some("svm".into()), ..Default::default() };
        assert_eq!(bad.resolve().unwrap_err().exit_code(), 2);
    }
}
