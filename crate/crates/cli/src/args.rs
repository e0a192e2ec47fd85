use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use carl_core::config::KeyValues;
use carl_core::disentangler::{DisentangleMode, DisentanglerConfig};
use carl_core::encoder::{AdjDirection, AdjNorm, EncoderConfig};
use carl_core::predictor::{ModelConfig, TrainConfig};

use crate::failure::{Failure, Result};

#[derive(Debug, Parser)]
#[command(name = "carl", version, about = "Causality-guided architecture performance prediction")]
pub struct Cli {
    /// `key = value` file whose entries act as flags; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-motif synthetic benchmark.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Train a predictor on a portion of a dataset and rank the full set.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Rank a dataset with a saved model or a predictions file.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Predictor-guided architecture search under a query budget.
    #[command(args_override_self = true)]
    Search(SearchArgs),
    /// Train over a grid of loss weights.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
    /// Export node and edge importance scores with DOT renderings.
    #[command(args_override_self = true)]
    Importance(ImportanceArgs),
    /// Check every analytic gradient against finite differences.
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory receiving every output file.
    #[arg(long, default_value = "carl-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV (`id,num_nodes,adjacency,ops,val_acc,test_acc`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Op vocabulary, one name per line. Defaults to `vocab.txt` beside the dataset.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

impl DataArgs {
    pub fn vocab_path(&self) -> PathBuf {
        self.vocab
            .clone()
            .unwrap_or_else(|| self.dataset.with_file_name("vocab.txt"))
    }
}

fn kebab<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value = "row-norm-self-loops", value_parser = kebab::<AdjNorm>)]
    pub norm: AdjNorm,
    #[arg(long, default_value = "as-given", value_parser = kebab::<AdjDirection>)]
    pub direction: AdjDirection,
    #[arg(long, default_value_t = 2)]
    pub sub_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_z: usize,
    /// both, node-only or edge-only.
    #[arg(long, default_value = "both", value_parser = kebab::<DisentangleMode>)]
    pub mode: DisentangleMode,
}

impl ModelArgs {
    pub fn config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                layers: self.layers,
                hidden: self.hidden,
                norm: self.norm,
                direction: self.direction,
            },
            disentangler: DisentanglerConfig {
                sub_layers: self.sub_layers,
                d_z: self.d_z,
                mode: self.mode,
            },
            init_seed: seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

impl LossArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            margin: self.margin,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Spec file; the built-in benchmark when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Decoration co-occurrence for the built-in benchmark.
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    /// Noise scale for the built-in benchmark.
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the architecture count of the spec.
    #[arg(long)]
    pub num_archs: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fraction of the dataset used for training.
    #[arg(long, default_value_t = 0.01)]
    pub portion: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model directory written by `train`.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    pub model: Option<PathBuf>,
    /// CSV of `id,prediction` rows to rank instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Evolution,
    Random,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Synthetic spec; mutants outside the table are then scored by its oracle.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Strategy::Evolution)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 80)]
    pub budget: usize,
    #[arg(long, default_value_t = 30)]
    pub n0: usize,
    #[arg(long, default_value_t = 50)]
    pub population: usize,
    #[arg(long, default_value_t = 100)]
    pub candidates: usize,
    /// Retrain after this many guided queries; 0 never retrains.
    #[arg(long, default_value_t = 10)]
    pub retrain_every: usize,
    /// Epochs of each warm-started retraining.
    #[arg(long, default_value_t = 50)]
    pub refit_epochs: usize,
    /// Architectures scored by the random strategy.
    #[arg(long, default_value_t = 10000)]
    pub sample_size: usize,
    /// Independent runs with seeds `seed..seed + repeats`.
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
    pub lambda1s: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0])]
    pub lambda2s: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub portion: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Architecture ids to export.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one backward rule (negative control).
    #[arg(long, hide = true)]
    pub fault: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Splices `--config FILE` entries into the argument list right after the
/// subcommand, so flags given explicitly later on the line override them.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| Failure::usage("--config needs a file"))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::data(format!("config {path}: {e}")))?;
    let kv = KeyValues::parse(&text).map_err(|e| Failure::usage(format!("config {path}: {e}")))?;
    let mut injected = Vec::new();
    for (k, v) in kv.entries() {
        let flag = format!("--{}", k.replace('_', "-"));
        match v.as_str() {
            "true" => injected.push(flag),
            "false" => {}
            _ => {
                injected.push(flag);
                injected.push(v.clone());
            }
        }
    }
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    rest.splice(sub..sub, injected);
    Ok(rest)
}
