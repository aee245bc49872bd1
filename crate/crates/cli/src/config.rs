//! Command settings. Each command has a flat record whose keys double as
//! long flags; a TOML file supplies values and flags override them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ihnn::baselines::BaselineConfig;
use ihnn::data::{LoadOptions, SynthConfig, DEFAULT_RANDOM_FEATURE_DIM};
use ihnn::equilibrium::{Activation, SolverConfig};
use ihnn::training::{GradCheckConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Overlays `flags` on the file at `path` and re-reads the result. Unknown
/// keys and mistyped values in the file are rejected.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(flags: &T, path: Option<&Path>) -> Result<T> {
    let mut merged = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table: toml::Table =
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            match serde_json::to_value(table)? {
                Value::Object(m) => m,
                _ => unreachable!("a TOML table serializes to an object"),
            }
        }
        None => Map::new(),
    };
    // every key serializes, as null when unset
    let known = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => unreachable!("settings serialize to an object"),
    };
    let mut unknown: Vec<&String> = merged.keys().filter(|k| !known.contains_key(*k)).collect();
    if !unknown.is_empty() {
        unknown.sort();
        let path = path.map(|p| p.display().to_string()).unwrap_or_default();
        bail!("{path}: unknown key(s) {unknown:?}");
    }
    if let Value::Object(set) = serde_json::to_value(flags)? {
        merged.extend(set.into_iter().filter(|(_, v)| !v.is_null()));
    }
    let resolved = serde_json::from_value(Value::Object(merged));
    match path {
        Some(p) => resolved.with_context(|| format!("invalid config {}", p.display())),
        None => Ok(resolved?),
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} is not a directory", path.display());
    }
    Ok(())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(())
}

pub fn prepare_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))
}

pub fn prepare_out_file(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => prepare_out_dir(parent),
        _ => Ok(()),
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Starting point: "smoke" (200 nodes) or "long-range" (600 nodes, sparse signal) [default: smoke]
    #[arg(long)]
    pub preset: Option<String>,
    /// Node count [default: 200]
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Number of planted communities (classes) [default: 2]
    #[arg(long)]
    pub communities: Option<usize>,
    /// Hyperedge count [default: 400]
    #[arg(long)]
    pub edges: Option<usize>,
    /// Mean hyperedge size s; sizes are uniform on 2..=2s-2 [default: 4]
    #[arg(long)]
    pub edge_size: Option<usize>,
    /// Probability that a member comes from outside the hyperedge's community [default: 0.05]
    #[arg(long)]
    pub impurity: Option<f64>,
    /// Fraction of each community with label-bearing features [default: 0.5]
    #[arg(long)]
    pub informative: Option<f64>,
    /// Feature width [default: 8]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Standard deviation of feature noise [default: 1.0]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Offset added to the label coordinate of informative nodes [default: 3.0]
    #[arg(long)]
    pub signal: Option<f64>,
    /// Training fraction of the split [default: 0.3]
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SynthArgs {
    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .context("missing output directory (--out or `out` in the config)")
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let seed = self.seed.unwrap_or(0);
        let base = match self.preset.as_deref().unwrap_or("smoke") {
            "smoke" => SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            "long-range" | "long_range" => SynthConfig::long_range(seed),
            other => bail!("unknown preset '{other}' (expected smoke or long-range)"),
        };
        Ok(SynthConfig {
            nodes: self.nodes.unwrap_or(base.nodes),
            communities: self.communities.unwrap_or(base.communities),
            edges: self.edges.unwrap_or(base.edges),
            edge_size: self.edge_size.unwrap_or(base.edge_size),
            impurity: self.impurity.unwrap_or(base.impurity),
            informative: self.informative.unwrap_or(base.informative),
            feature_dim: self.feature_dim.unwrap_or(base.feature_dim),
            noise: self.noise.unwrap_or(base.noise),
            signal: self.signal.unwrap_or(base.signal),
            train_ratio: self.train_ratio.unwrap_or(base.train_ratio),
            seed,
        })
    }
}

/// How a dataset directory is read.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataArgs {
    /// Dataset directory (hyperedges.txt, labels.txt, optional features.csv)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Width of seeded random features when features.csv is absent [default: 64]
    #[arg(long)]
    pub random_feature_dim: Option<usize>,
    /// Seed for the split and for random features [default: 0]
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Training fraction of the split [default: 0.3]
    #[arg(long)]
    pub train_ratio: Option<f64>,
}

impl DataArgs {
    pub fn dir(&self) -> Result<&Path> {
        let dir = self
            .data
            .as_deref()
            .context("missing dataset directory (--data or `data` in the config)")?;
        require_dir(dir, "dataset")?;
        require_file(&dir.join(ihnn::data::HYPEREDGES_FILE), "hyperedge file")?;
        require_file(&dir.join(ihnn::data::LABELS_FILE), "label file")?;
        Ok(dir)
    }

    pub fn load_options(&self) -> LoadOptions {
        let d = LoadOptions::default();
        LoadOptions {
            feature_dim: self.random_feature_dim.unwrap_or(DEFAULT_RANDOM_FEATURE_DIM),
            seed: self.data_seed.unwrap_or(d.seed),
            train_ratio: self.train_ratio.unwrap_or(d.train_ratio),
        }
    }
}

/// Model and optimizer keys shared by train, gradcheck and oversmooth.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Training epochs (full-graph steps) [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Step size [default: 0.01]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Heavy-ball momentum in [0, 1) [default: 0.0]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight of the membership loss [default: 0.1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Contraction target in (0, 1) [default: 0.95]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Embedding width d [default: 128]
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Membership pairs sampled per epoch [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialization, sampling and the validation hold-out [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// relu, sigmoid or identity [default: relu]
    #[arg(long)]
    pub activation: Option<String>,
    /// Forward solver tolerance on the max entrywise change [default: 1e-6]
    #[arg(long)]
    pub forward_tol: Option<f64>,
    /// Forward solver iteration cap [default: 300]
    #[arg(long)]
    pub forward_max_iter: Option<usize>,
    /// Adjoint solver tolerance [default: 1e-8]
    #[arg(long)]
    pub backward_tol: Option<f64>,
    /// Adjoint solver iteration cap [default: 300]
    #[arg(long)]
    pub backward_max_iter: Option<usize>,
    /// Fraction of training nodes held out for validation reporting [default: 0.1]
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Power-iteration tolerance for the operator norm [default: 1e-14]
    #[arg(long)]
    pub opnorm_tol: Option<f64>,
    /// Power-iteration cap [default: 20000]
    #[arg(long)]
    pub opnorm_max_iter: Option<usize>,
}

impl ModelArgs {
    pub fn train_config(&self) -> Result<TrainConfig> {
        self.train_config_over(&TrainConfig::default())
    }

    /// Applies the keys that are set on top of `base`.
    pub fn train_config_over(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let activation = match &self.activation {
            Some(a) => a.parse::<Activation>()?,
            None => base.activation,
        };
        let forward = SolverConfig {
            tol: self.forward_tol.unwrap_or(base.forward.tol),
            max_iter: self.forward_max_iter.unwrap_or(base.forward.max_iter),
        };
        let backward = SolverConfig {
            tol: self.backward_tol.unwrap_or(base.backward.tol),
            max_iter: self.backward_max_iter.unwrap_or(base.backward.max_iter),
        };
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            gamma: self.gamma.unwrap_or(base.gamma),
            kappa: self.kappa.unwrap_or(base.kappa),
            hidden_dim: self.hidden_dim.unwrap_or(base.hidden_dim),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            seed: self.seed.unwrap_or(base.seed),
            activation,
            forward,
            backward,
            val_fraction: self.val_fraction.unwrap_or(base.val_fraction),
            opnorm_tol: self.opnorm_tol.unwrap_or(base.opnorm_tol),
            opnorm_max_iter: self.opnorm_max_iter.unwrap_or(base.opnorm_max_iter),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Output directory for model.txt, metrics.csv and report.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Model file written by `train`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report path [default: eval.json next to the model file]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset keys; unset ones fall back to those stored in the model file
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmbedArgs {
    /// Model file written by `train`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory for node_embeddings.csv and hyperedge_embeddings.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct GradcheckArgs {
    /// Dataset directory [default: an 8-node synthetic hypergraph]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Width of seeded random features when features.csv is absent [default: 64]
    #[arg(long)]
    pub random_feature_dim: Option<usize>,
    /// Seed for the split and for random features [default: 0]
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Training fraction of the split [default: 0.5]
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Check at the parameters of this model file instead of a fresh initialization
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// JSON report path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Central-difference step [default: 1e-5]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Relative tolerance [default: 1e-5]
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Absolute tolerance floor [default: 1e-8]
    #[arg(long)]
    pub abs_tol: Option<f64>,
    /// Smallest |pre-activation| accepted under relu [default: 1e-3]
    #[arg(long)]
    pub kink_margin: Option<f64>,
    /// Refuse models with more scalar parameters than this [default: 5000]
    #[arg(long)]
    pub max_parameters: Option<usize>,
    /// Gradcheck overrides: hidden_dim defaults to 3, solver tolerances to 1e-14 with 20000 iterations
    #[command(flatten)]
    #[serde(flatten)]
    pub model_keys: ModelArgs,
}

impl GradcheckArgs {
    pub fn check_config(&self) -> GradCheckConfig {
        let d = GradCheckConfig::default();
        GradCheckConfig {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            kink_margin: self.kink_margin.unwrap_or(d.kink_margin),
            max_parameters: self.max_parameters.unwrap_or(d.max_parameters),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let tight = SolverConfig {
            tol: 1e-14,
            max_iter: 20_000,
        };
        let base = TrainConfig {
            hidden_dim: 3,
            batch_size: 8,
            val_fraction: 0.0,
            forward: tight,
            backward: tight,
            ..TrainConfig::default()
        };
        self.model_keys.train_config_over(&base)
    }
}

pub const OVERSMOOTH_DEPTHS: std::ops::RangeInclusive<usize> = 2..=6;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct OversmoothArgs {
    /// CSV output path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset directory [default: the long-range synthetic dataset generated in memory]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generator seed for the in-memory dataset [default: 0]
    #[arg(long)]
    pub dataset_seed: Option<u64>,
    /// Width of seeded random features when features.csv is absent [default: 64]
    #[arg(long)]
    pub random_feature_dim: Option<usize>,
    /// Training fraction; every run seed draws its own split [default: 0.3]
    #[arg(long)]
    pub train_ratio: Option<f64>,
    /// Number of run seeds R [default: 5]
    #[arg(long)]
    pub seeds: Option<u64>,
    /// First run seed [default: 0]
    #[arg(long)]
    pub first_seed: Option<u64>,
    /// Worker threads, 0 for all cores [default: 0]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Model keys shared by every run. Defaults differ from `train`: epochs 300,
    /// learning_rate 0.02, momentum 0.9, hidden_dim 8
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

impl OversmoothArgs {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = TrainConfig {
            epochs: 300,
            learning_rate: 0.02,
            momentum: 0.9,
            hidden_dim: 8,
            ..TrainConfig::default()
        };
        self.model.train_config_over(&base)
    }

    pub fn baseline_config(cfg: &TrainConfig) -> BaselineConfig {
        BaselineConfig {
            epochs: cfg.epochs,
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            hidden_dim: cfg.hidden_dim,
            seed: cfg.seed,
            activation: cfg.activation,
        }
    }
}
