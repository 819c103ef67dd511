use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use dpgn::calculus::VertexFunction;
use dpgn::checkpoint::TrainedModel;
use dpgn::data::{load_dataset_from, save_dataset, NormalizationKind, SplitFractions, TrajectoryDataset};
use dpgn::model::ModelKind;
use dpgn::pde::{export_trajectory, make_synthetic_dataset, simulate as run_pde, PdeKind, PdeSpec, Stability, SyntheticConfig};
use dpgn::train::{self, horizon_sweep, metric_log_jsonl, MetricRecord, TrainConfig};

use crate::options::{
    required, ConfigError, EvalArgs, GenDataArgs, HorizonArgs, InductiveArgs, SimulateArgs, TrainArgs,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

/// Accepts either a manifest file or a directory holding `manifest.json`.
fn load_data(path: &Path) -> Result<TrajectoryDataset> {
    let manifest = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    load_dataset_from(&manifest).with_context(|| format!("loading dataset {}", manifest.display()))
}

fn pde_spec(kind: Option<PdeKind>, alpha: Option<f64>, c: Option<f64>) -> PdeSpec {
    match kind.unwrap_or(PdeKind::Diffusion) {
        PdeKind::Diffusion => PdeSpec::diffusion(alpha.unwrap_or(0.1)),
        PdeKind::Wave => PdeSpec::wave(c.unwrap_or(0.3)),
    }
}

fn validated(config: TrainConfig) -> Result<TrainConfig> {
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct StabilityReport {
    lambda_max: f64,
    value: f64,
    bound: f64,
    stable: bool,
}

impl From<Stability> for StabilityReport {
    fn from(s: Stability) -> Self {
        Self { lambda_max: s.lambda_max, value: s.value, bound: s.bound, stable: s.is_stable() }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    spec: PdeSpec,
    seed: u64,
    n_nodes: usize,
    n_states: usize,
    steps: usize,
    initial_mass: f64,
    final_mass: f64,
    max_mass_drift: f64,
    stability: StabilityReport,
    mass: Vec<f64>,
    energy: Vec<f64>,
    dirichlet_energy: Vec<f64>,
    trajectory: PathBuf,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let args = args.resolve()?;
    let g = args.graph.build()?;
    let spec = pde_spec(args.equation, args.alpha, args.c);
    spec.validate()?;
    let steps = args.steps.unwrap_or(50);
    let source = args.source.unwrap_or(0);
    if source >= g.n_nodes() {
        return Err(ConfigError(format!("source: node {source} out of range for {} nodes", g.n_nodes())).into());
    }
    let amplitude = args.amplitude.unwrap_or(1.0);
    if !amplitude.is_finite() {
        return Err(ConfigError("amplitude: must be finite".into()).into());
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("."));
    let seed = args.seed.unwrap_or(0);

    let mut pulse = vec![0.0; g.n_nodes()];
    pulse[source] = amplitude;
    let pulse = VertexFunction::from_vec(pulse);
    let init = vec![pulse; spec.order()];
    let traj = run_pde(&g, &spec, &init, steps)?;

    ensure_dir(&out)?;
    let csv_path = out.join("trajectory.csv");
    export_trajectory(&csv_path, &traj, &spec, seed)?;

    let mass = traj.masses();
    let initial_mass = mass[0];
    let max_mass_drift = mass.iter().map(|m| (m - initial_mass).abs()).fold(0.0, f64::max);
    let summary = SimulateSummary {
        spec,
        seed,
        n_nodes: g.n_nodes(),
        n_states: traj.len(),
        steps,
        initial_mass,
        final_mass: *mass.last().expect("non-empty"),
        max_mass_drift,
        stability: spec.stability(&g).into(),
        energy: traj.energies(),
        dirichlet_energy: traj.dirichlet_energies(&g)?,
        mass,
        trajectory: csv_path,
    };
    write_json(&out.join("summary.json"), &summary)?;
    print_json(&serde_json::json!({
        "n_states": summary.n_states,
        "max_mass_drift": summary.max_mass_drift,
        "stable": summary.stability.stable,
        "summary": out.join("summary.json"),
    }))
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let args = args.resolve()?;
    let g = args.graph.build()?;
    let spec = pde_spec(args.equation, args.alpha, args.c);
    let out = required(args.out, "out")?;
    let mut cfg = SyntheticConfig::new(
        spec,
        args.sequences.unwrap_or(4),
        args.steps.unwrap_or(50),
        args.seed.unwrap_or(0),
    );
    cfg.noise_std = args.noise.unwrap_or(0.0);
    cfg.amplitude = args.amplitude.unwrap_or(1.0);
    cfg.n_land_types = args.land_types.unwrap_or(1);
    if cfg.n_land_types == 0 {
        return Err(ConfigError("land_types: must be at least 1".into()).into());
    }
    cfg.normalization = args.normalization.unwrap_or(NormalizationKind::ZScore);
    if let Some(f) = args.split {
        cfg.fractions = SplitFractions::new(f[0], f[1], f[2]).map_err(|e| ConfigError(format!("split: {e}")))?;
    }
    let dataset = make_synthetic_dataset(&g, &cfg)?;
    ensure_dir(&out)?;
    save_dataset(&dataset, &out)?;
    print_json(&serde_json::json!({
        "manifest": out.join("manifest.json"),
        "n_nodes": g.n_nodes(),
        "n_sequences": dataset.sequences().len(),
        "n_edge_types": dataset.n_edge_types(),
    }))
}

#[derive(Serialize)]
struct TrainSummary {
    model: ModelKind,
    selected_iteration: usize,
    final_train_mse: Option<f64>,
    best_val_mse: Option<f64>,
    checkpoint: PathBuf,
    metrics: PathBuf,
}

fn train_and_save(dataset: &TrajectoryDataset, config: &TrainConfig, kind: ModelKind, out: &Path) -> Result<(TrainedModel, TrainSummary)> {
    let outcome = train::train(dataset, config, kind)?;
    ensure_dir(out)?;
    let checkpoint = out.join("checkpoint.json");
    outcome.model.save(&checkpoint)?;
    let metrics = out.join("metrics.jsonl");
    fs::write(&metrics, metric_log_jsonl(&outcome.log)).with_context(|| format!("writing {}", metrics.display()))?;
    let last_of = |split: dpgn::data::Split| -> Vec<&MetricRecord> {
        outcome.log.iter().filter(|r| r.split == split).collect()
    };
    let summary = TrainSummary {
        model: kind,
        selected_iteration: outcome.selected_iteration,
        final_train_mse: last_of(dpgn::data::Split::Train).last().map(|r| r.mse),
        best_val_mse: last_of(dpgn::data::Split::Val).iter().map(|r| r.mse).reduce(f64::min),
        checkpoint,
        metrics,
    };
    Ok((outcome.model, summary))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let args = args.resolve()?;
    let config = validated(args.train.to_config())?;
    let data = required(args.data, "data")?;
    let out = required(args.out, "out")?;
    let dataset = load_data(&data)?;
    let (_, summary) = train_and_save(&dataset, &config, args.train.model(), &out)?;
    print_json(&summary)
}

#[derive(Serialize)]
struct EvalReport {
    model: ModelKind,
    horizon: usize,
    /// Test MSE at rollout steps 1..=horizon.
    mse: Vec<f64>,
    mean_mse: f64,
}

fn report(model: &TrainedModel, mse: Vec<f64>) -> EvalReport {
    let (mean_mse, _) = train::mean_std(&mse);
    EvalReport { model: model.kind, horizon: mse.len(), mse, mean_mse }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&args.checkpoint)?;
    let dataset = load_data(&args.data)?;
    let mse = train::evaluate(&model, &dataset, args.horizon)?;
    let rep = report(&model, mse);
    if let Some(path) = &args.out {
        write_json(path, &rep)?;
    }
    print_json(&rep)
}

pub fn inductive(args: InductiveArgs) -> Result<()> {
    let args = args.resolve()?;
    let config = validated(args.train.to_config())?;
    let train_on = required(args.train_on, "train-on")?;
    let eval_on = required(args.eval_on, "eval-on")?;
    let out = required(args.out, "out")?;
    let source = load_data(&train_on)?;
    let target = load_data(&eval_on)?;
    let (model, summary) = train_and_save(&source, &config, args.train.model(), &out)?;
    let mse = train::evaluate_inductive(&model, &target, config.horizon)?;
    let rep = report(&model, mse);
    write_json(&out.join("inductive.json"), &rep)?;
    print_json(&serde_json::json!({ "train": summary, "inductive": rep }))
}

pub fn horizon(args: HorizonArgs) -> Result<()> {
    let args = args.resolve()?;
    let base = validated(args.train.to_config())?;
    let data = required(args.data, "data")?;
    let max_h = args.horizons.unwrap_or(10);
    let n_seeds = args.seeds.unwrap_or(5);
    if max_h == 0 {
        return Err(ConfigError("horizons: must be at least 1".into()).into());
    }
    if n_seeds == 0 {
        return Err(ConfigError("seeds: must be at least 1".into()).into());
    }
    let dataset = load_data(&data)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| base.seed + k).collect();
    let rows = horizon_sweep(&dataset, &base, args.train.model(), max_h, &seeds)?;
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut w = csv::Writer::from_path(out.join("horizon.csv"))?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    for row in &rows {
        print_json(row)?;
    }
    Ok(())
}
