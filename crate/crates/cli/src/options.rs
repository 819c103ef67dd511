//! Command-line flags and JSON config files.
//!
//! Every tunable flag is optional on the command line. A `--config` JSON
//! object may supply the same settings under their snake_case names; flags
//! win over the file, and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use dpgn::data::NormalizationKind;
use dpgn::model::ModelKind;
use dpgn::pde::PdeKind;
use dpgn::train::{Selection, TrainConfig};

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Parser)]
#[command(name = "dpgn", version, about = "Graph PDE simulation and physics-regularised graph networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an explicit diffusion or wave simulation and write the trajectory.
    Simulate(SimulateArgs),
    /// Simulate noisy trajectories and save them as a dataset directory.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a JSON-lines metric log.
    Train(TrainArgs),
    /// Report test MSE per rollout step for a checkpoint.
    Eval(EvalArgs),
    /// Train on one graph and evaluate on another without refitting.
    Inductive(InductiveArgs),
    /// Train one model per horizon and seed; report mean and std of test MSE.
    Horizon(HorizonArgs),
}

fn parse_pde_kind(s: &str) -> Result<PdeKind, String> {
    match s {
        "diffusion" => Ok(PdeKind::Diffusion),
        "wave" => Ok(PdeKind::Wave),
        _ => Err(format!("unknown equation {s:?}; expected diffusion or wave")),
    }
}

fn parse_selection(s: &str) -> Result<Selection, String> {
    match s {
        "best-val" => Ok(Selection::BestVal),
        "last" => Ok(Selection::Last),
        _ => Err(format!("unknown selection {s:?}; expected best-val or last")),
    }
}

fn parse_normalization(s: &str) -> Result<NormalizationKind, String> {
    match s {
        "zscore" => Ok(NormalizationKind::ZScore),
        "none" => Ok(NormalizationKind::None),
        _ => Err(format!("unknown normalization {s:?}; expected zscore or none")),
    }
}

/// Copies each field of `$from` into `$into` where `$into` has none.
macro_rules! fill {
    ($into:expr, $from:expr; $($field:ident),+ $(,)?) => {
        $( if $into.$field.is_none() { $into.$field = $from.$field.take(); } )+
    };
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", path.display())))
}

/// Where the graph comes from: a JSON file or a built-in family.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphArgs {
    /// Graph JSON file
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Lattice graph, e.g. 5x6
    #[arg(long)]
    pub grid: Option<String>,
    /// Path graph with N nodes
    #[arg(long = "path")]
    #[serde(rename = "path")]
    pub path_nodes: Option<usize>,
    /// Cycle graph with N nodes
    #[arg(long = "cycle")]
    #[serde(rename = "cycle")]
    pub cycle_nodes: Option<usize>,
    /// Random geometric graph with N nodes
    #[arg(long = "geometric")]
    #[serde(rename = "geometric")]
    pub geometric_nodes: Option<usize>,
    /// Connection radius for --geometric
    #[arg(long)]
    pub radius: Option<f64>,
    /// Seed for --geometric
    #[arg(long)]
    pub graph_seed: Option<u64>,
}

impl GraphArgs {
    fn fill_from(&mut self, mut other: GraphArgs) {
        fill!(self, other; graph, grid, path_nodes, cycle_nodes, geometric_nodes, radius, graph_seed);
    }

    pub fn build(&self) -> anyhow::Result<dpgn::graph::Graph> {
        use dpgn::graph::{cycle, grid, path, random_geometric};
        let sources = [
            self.graph.is_some(),
            self.grid.is_some(),
            self.path_nodes.is_some(),
            self.cycle_nodes.is_some(),
            self.geometric_nodes.is_some(),
        ];
        match sources.iter().filter(|&&s| s).count() {
            0 => return Err(ConfigError("no graph given; use --graph, --grid, --path, --cycle or --geometric".into()).into()),
            1 => {}
            _ => return Err(ConfigError("give exactly one graph source".into()).into()),
        }
        if let Some(p) = &self.graph {
            return Ok(dpgn::data::load_graph(p)?);
        }
        if let Some(spec) = &self.grid {
            let dims: Vec<usize> = spec
                .split('x')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| ConfigError(format!("grid: expected ROWSxCOLS, got {spec:?}")))?;
            return match dims.as_slice() {
                [r, c] if *r > 0 && *c > 0 => Ok(grid(*r, *c)),
                _ => Err(ConfigError(format!("grid: expected ROWSxCOLS, got {spec:?}")).into()),
            };
        }
        if let Some(n) = self.path_nodes {
            if n == 0 {
                return Err(ConfigError("path: need at least one node".into()).into());
            }
            return Ok(path(n));
        }
        if let Some(n) = self.cycle_nodes {
            if n < 3 {
                return Err(ConfigError("cycle: need at least 3 nodes".into()).into());
            }
            return Ok(cycle(n));
        }
        let n = self.geometric_nodes.expect("one source is set");
        if n == 0 {
            return Err(ConfigError("geometric: need at least one node".into()).into());
        }
        let radius = self.radius.unwrap_or(0.3);
        Ok(random_geometric(n, radius, self.graph_seed.unwrap_or(0)).0)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    /// diffusion or wave
    #[arg(long = "eq", value_parser = parse_pde_kind)]
    #[serde(rename = "eq")]
    pub equation: Option<PdeKind>,
    /// Diffusivity per step
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Wave speed per step
    #[arg(long)]
    pub c: Option<f64>,
    /// Number of update steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// Node holding the initial source
    #[arg(long)]
    pub source: Option<usize>,
    /// Height of the initial source
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recorded in the trajectory metadata
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with defaults for any of these flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if let Some(path) = self.config.clone() {
            let mut file: SimulateArgs = read_config(&path)?;
            self.graph.fill_from(std::mem::take(&mut file.graph));
            fill!(self, file; equation, alpha, c, steps, source, amplitude, out, seed);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[command(allow_negative_numbers = true)]
pub struct GenDataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub graph: GraphArgs,
    /// diffusion or wave
    #[arg(long = "eq", value_parser = parse_pde_kind)]
    #[serde(rename = "eq")]
    pub equation: Option<PdeKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Number of sequences
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Supervised pairs per sequence
    #[arg(long)]
    pub steps: Option<usize>,
    /// Observation noise standard deviation
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Number of random node land types used to label edges
    #[arg(long)]
    pub land_types: Option<usize>,
    /// zscore or none
    #[arg(long, value_parser = parse_normalization)]
    pub normalization: Option<NormalizationKind>,
    /// Train, validation and test fractions, e.g. 0.65,0.1,0.25
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl GenDataArgs {
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if let Some(path) = self.config.clone() {
            let mut file: GenDataArgs = read_config(&path)?;
            self.graph.fill_from(std::mem::take(&mut file.graph));
            fill!(self, file; equation, alpha, c, sequences, steps, noise, amplitude, land_types, normalization, split, out, seed);
        }
        Ok(self)
    }
}

/// Training hyperparameters; unset values fall back to [`TrainConfig::default`].
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFlags {
    /// dpgn, gn-only, gn-skip or mlp
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Weight of the latent diffusion penalty
    #[arg(long = "lambda")]
    pub lambda: Option<f64>,
    /// Latent diffusivity
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Rollout length for training windows
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long = "lr")]
    #[serde(alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of training steps whose targets are used
    #[arg(long)]
    pub label_fraction: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Latent width
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Iterations between metric log entries
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// best-val or last
    #[arg(long, value_parser = parse_selection)]
    pub selection: Option<Selection>,
}

impl TrainFlags {
    fn fill_from(&mut self, mut other: TrainFlags) {
        fill!(self, other; model, lambda, alpha, horizon, learning_rate, iterations, seed, label_fraction,
            adam_beta1, adam_beta2, adam_eps, d_h, batch_size, eval_every, selection);
    }

    pub fn model(&self) -> ModelKind {
        self.model.unwrap_or(ModelKind::Dpgn)
    }

    pub fn to_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lambda: self.lambda.unwrap_or(d.lambda),
            alpha: self.alpha.unwrap_or(d.alpha),
            horizon: self.horizon.unwrap_or(d.horizon),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            iterations: self.iterations.unwrap_or(d.iterations),
            seed: self.seed.unwrap_or(d.seed),
            label_fraction: self.label_fraction.unwrap_or(d.label_fraction),
            adam_beta1: self.adam_beta1.unwrap_or(d.adam_beta1),
            adam_beta2: self.adam_beta2.unwrap_or(d.adam_beta2),
            adam_eps: self.adam_eps.unwrap_or(d.adam_eps),
            d_h: self.d_h.unwrap_or(d.d_h),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            selection: self.selection.unwrap_or(d.selection),
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// Dataset manifest (or the directory holding manifest.json)
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory for checkpoint.json and metrics.jsonl
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with defaults for the training flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Config file layout shared by the commands that train.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    train_on: Option<PathBuf>,
    eval_on: Option<PathBuf>,
    horizons: Option<usize>,
    seeds: Option<usize>,
    #[serde(flatten)]
    train: TrainFlags,
}

fn load_train_file(config: &Option<PathBuf>) -> Result<TrainFile, ConfigError> {
    match config {
        Some(p) => read_config(p),
        None => Ok(TrainFile::default()),
    }
}

impl TrainArgs {
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let mut file = load_train_file(&self.config)?;
        self.train.fill_from(std::mem::take(&mut file.train));
        fill!(self, file; data, out);
        Ok(self)
    }
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest (or directory)
    #[arg(long)]
    pub data: PathBuf,
    /// Rollout steps to score
    #[arg(long, default_value_t = 1)]
    pub horizon: usize,
    /// Also write the result JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct InductiveArgs {
    /// Dataset used for training
    #[arg(long)]
    pub train_on: Option<PathBuf>,
    /// Dataset on a different graph used for evaluation
    #[arg(long)]
    pub eval_on: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl InductiveArgs {
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let mut file = load_train_file(&self.config)?;
        self.train.fill_from(std::mem::take(&mut file.train));
        fill!(self, file; train_on, eval_on, out);
        Ok(self)
    }
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct HorizonArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Largest horizon; horizons 1..=N are swept
    #[arg(long)]
    pub horizons: Option<usize>,
    /// Number of seeds per horizon, starting at --seed
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl HorizonArgs {
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let mut file = load_train_file(&self.config)?;
        self.train.fill_from(std::mem::take(&mut file.train));
        fill!(self, file; data, out, horizons, seeds);
        Ok(self)
    }
}

pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| ConfigError(format!("missing required setting --{flag}")))
}
