//! Adam training loop, metric logging and the evaluation protocols.
//!
//! A training example is a window `(sequence, t)`: the features at `t` are
//! encoded, the core is rolled `horizon` steps and step `k` is compared with
//! the targets at `t + k - 1`. All errors are reported in normalised units.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::checkpoint::TrainedModel;
use crate::data::{DataError, Normalizer, Split, TrajectoryDataset};
use crate::model::{forward, physics_loss, total_loss, GraphContext, ModelConfig, ModelError, ModelKind, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("no {split:?} windows of length {horizon}")]
    NoWindows { split: Split, horizon: usize },
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Which parameters [`train`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Parameters at the evaluation point with the lowest validation MSE.
    #[default]
    BestVal,
    /// Parameters after the final iteration.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the latent diffusion penalty.
    pub lambda: f64,
    /// Latent diffusivity in the penalty.
    pub alpha: f64,
    /// Rollout length used for training windows.
    pub horizon: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Share of training time steps whose targets enter the loss.
    pub label_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub d_h: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-5,
            alpha: 0.001,
            horizon: 1,
            learning_rate: 0.001,
            iterations: 30_000,
            seed: 0,
            label_fraction: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            d_h: 64,
            batch_size: 1,
            eval_every: 100,
            selection: Selection::BestVal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, message: &str| Err(TrainError::InvalidConfig { field, message: message.into() });
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", "must be finite and non-negative");
        }
        if !self.alpha.is_finite() {
            return bad("alpha", "must be finite");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return bad("label_fraction", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return bad("adam_beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta2", "must lie in [0, 1)");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps", "must be positive");
        }
        if self.d_h == 0 {
            return bad("d_h", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1");
        }
        Ok(())
    }
}

/// One line of the JSON-lines metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub split: Split,
    pub mse: f64,
    pub horizon: usize,
}

pub fn metric_log_jsonl(log: &[MetricRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<MetricRecord>,
    /// Iteration whose parameters were kept.
    pub selected_iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    seq: usize,
    start: usize,
}

/// Dataset converted to per-step tensors for one model.
struct Prepared {
    ctx: GraphContext,
    features: Vec<Vec<Tensor>>,
    targets: Vec<Vec<Tensor>>,
    splits: Vec<Vec<Split>>,
}

fn time_slices(arr: &ndarray::Array3<f64>) -> Vec<Tensor> {
    arr.outer_iter()
        .map(|slice| Tensor::from_array2(&slice.to_owned()).expect("dataset values are finite"))
        .collect()
}

impl Prepared {
    fn new(dataset: &TrajectoryDataset, n_edge_types: usize, normalizer: Option<&Normalizer>) -> Self {
        let sequences = match normalizer {
            Some(n) => dataset.sequences().iter().map(|s| n.normalize(s)).collect(),
            None => dataset.sequences().to_vec(),
        };
        Self {
            ctx: GraphContext::new(dataset.graph(), dataset.edge_types(), n_edge_types),
            features: sequences.iter().map(|s| time_slices(&s.features)).collect(),
            targets: sequences.iter().map(|s| time_slices(&s.targets)).collect(),
            splits: dataset.splits().to_vec(),
        }
    }

    /// Windows whose `horizon` target steps all carry the tag `split`.
    fn windows(&self, split: Split, horizon: usize) -> Vec<Window> {
        let mut out = Vec::new();
        for (seq, tags) in self.splits.iter().enumerate() {
            if tags.len() < horizon {
                continue;
            }
            for start in 0..=tags.len() - horizon {
                if tags[start..start + horizon].iter().all(|&t| t == split) {
                    out.push(Window { seq, start });
                }
            }
        }
        out
    }

    /// Mean squared error per rollout step, averaged over `windows`.
    fn step_mse(
        &self,
        kind: ModelKind,
        params: &ModelParams<Tensor>,
        windows: &[Window],
        horizon: usize,
    ) -> Result<Vec<f64>, TrainError> {
        let mut totals = vec![0.0; horizon];
        for w in windows {
            let mut tape = Tape::new();
            let p = params.bind_constant(&mut tape);
            let x = tape.constant(self.features[w.seq][w.start].clone());
            let fwd = forward(&mut tape, &self.ctx, kind, &p, x, horizon)?;
            for (k, &pred) in fwd.predictions.iter().enumerate() {
                let target = &self.targets[w.seq][w.start + k];
                let pred = tape.value(pred);
                let se: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
                totals[k] += se / target.len() as f64;
            }
        }
        let n = windows.len().max(1) as f64;
        Ok(totals.into_iter().map(|t| t / n).collect())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &ModelParams<Tensor>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.named().iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn update(&mut self, params: &mut ModelParams<Tensor>, grads: &[Option<Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut k = 0;
        params.visit_mut(&mut |t: &mut Tensor| {
            if let Some(g) = &grads[k] {
                let (m, v) = (&mut self.m[k], &mut self.v[k]);
                for (i, x) in t.data_mut().iter_mut().enumerate() {
                    let gi = g.data()[i];
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
            k += 1;
        });
    }
}

/// Per-step flag telling whether the target at that step enters the loss.
/// A seeded random `label_fraction` share of each sequence's training steps is kept.
fn label_mask(splits: &[Vec<Split>], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    splits
        .iter()
        .map(|tags| {
            let mut train: Vec<usize> = (0..tags.len()).filter(|&t| tags[t] == Split::Train).collect();
            train.shuffle(rng);
            let keep = ((train.len() as f64) * fraction).round() as usize;
            let mut mask = vec![false; tags.len()];
            for &t in &train[..keep] {
                mask[t] = true;
            }
            mask
        })
        .collect()
}

fn nonfinite_at(iteration: usize) -> impl Fn(TrainError) -> TrainError {
    move |e| match e {
        TrainError::Model(ModelError::Autodiff(AutodiffError::NonFiniteValue { .. })) => {
            TrainError::NonFiniteLoss { iteration }
        }
        other => other,
    }
}

/// Loss of one batch on a fresh tape; returns the tape, bound params and loss.
fn batch_loss(
    prep: &Prepared,
    kind: ModelKind,
    cfg: &TrainConfig,
    lambda: f64,
    params: &ModelParams<Tensor>,
    labels: &[Vec<bool>],
    batch: &[Window],
) -> Result<(Tape, ModelParams<Var>, Var), TrainError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    for w in batch {
        let x = tape.constant(prep.features[w.seq][w.start].clone());
        let fwd = forward(&mut tape, &prep.ctx, kind, &p, x, cfg.horizon)?;
        let targets: Vec<Option<Var>> = (0..cfg.horizon)
            .map(|k| {
                let t = w.start + k;
                labels[w.seq][t].then(|| tape.constant(prep.targets[w.seq][t].clone()))
            })
            .collect();
        let physics = if lambda > 0.0 {
            Some(physics_loss(&mut tape, &prep.ctx, &fwd.node_states, cfg.alpha)?)
        } else {
            None
        };
        losses.push(total_loss(&mut tape, &fwd.predictions, &targets, physics, lambda)?);
    }
    let sum = tape.add_all(&losses)?;
    let loss = tape.scale(sum, 1.0 / batch.len() as f64)?;
    Ok((tape, p, loss))
}

/// Trains `kind` on the training split of `dataset`.
///
/// Baselines ignore `config.lambda`. The metric log holds train and
/// validation MSE at iteration 0, every `eval_every` iterations and at the end.
pub fn train(dataset: &TrajectoryDataset, config: &TrainConfig, kind: ModelKind) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if kind == ModelKind::Mlp && config.horizon != 1 {
        return Err(TrainError::InvalidConfig {
            field: "horizon",
            message: "the mlp baseline is one-step only".into(),
        });
    }
    let lambda = if kind.uses_physics() { config.lambda } else { 0.0 };
    let model_cfg = ModelConfig {
        d_in: dataset.d_in(),
        d_h: config.d_h,
        d_out: dataset.d_out(),
        n_edge_types: dataset.n_edge_types(),
    };
    let prep = Prepared::new(dataset, model_cfg.n_edge_types, dataset.normalizer());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&model_cfg, &mut rng);
    let labels = label_mask(&prep.splits, config.label_fraction, &mut rng);

    let h = config.horizon;
    let train_windows = prep.windows(Split::Train, h);
    if train_windows.is_empty() {
        return Err(TrainError::NoWindows { split: Split::Train, horizon: h });
    }
    let monitor: Vec<Window> = train_windows.choose_multiple(&mut rng, 32).copied().collect();
    let val_windows = prep.windows(Split::Val, h);
    let selection = if val_windows.is_empty() && config.selection == Selection::BestVal {
        log::warn!("no validation windows of length {h}; keeping the last parameters");
        Selection::Last
    } else {
        config.selection
    };

    let mut adam = Adam::new(&params, config);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<Tensor>)> = None;
    let mut record = |it: usize, params: &ModelParams<Tensor>, log: &mut Vec<MetricRecord>| -> Result<(), TrainError> {
        let train_mse = mean(&prep.step_mse(kind, params, &monitor, h).map_err(nonfinite_at(it))?);
        log.push(MetricRecord { iteration: it, split: Split::Train, mse: train_mse, horizon: h });
        if !val_windows.is_empty() {
            let val_mse = mean(&prep.step_mse(kind, params, &val_windows, h).map_err(nonfinite_at(it))?);
            log.push(MetricRecord { iteration: it, split: Split::Val, mse: val_mse, horizon: h });
            if selection == Selection::BestVal && best.as_ref().is_none_or(|(b, _, _)| val_mse < *b) {
                best = Some((val_mse, it, params.clone()));
            }
        }
        log::debug!("iteration {it}: train mse {train_mse:.6e}");
        Ok(())
    };
    record(0, &params, &mut log)?;

    for it in 1..=config.iterations {
        let batch: Vec<Window> = (0..config.batch_size)
            .map(|_| train_windows[rng.random_range(0..train_windows.len())])
            .collect();
        let (tape, p, loss) =
            batch_loss(&prep, kind, config, lambda, &params, &labels, &batch).map_err(nonfinite_at(it))?;
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Option<Tensor>> = p.named().iter().map(|(_, &v)| grads.take(v)).collect();
        adam.update(&mut params, &grads);
        if it % config.eval_every == 0 || it == config.iterations {
            record(it, &params, &mut log)?;
        }
    }

    let (params, selected_iteration) = match best {
        Some((_, it, p)) if selection == Selection::BestVal => (p, it),
        _ => (params, config.iterations),
    };
    Ok(TrainOutcome {
        model: TrainedModel {
            kind,
            alpha: config.alpha,
            edge_type_map: dataset.edge_type_map().clone(),
            normalizer: dataset.normalizer().cloned(),
            params,
        },
        log,
        selected_iteration,
    })
}

/// Test-split MSE at rollout steps `1..=horizon` of `model` on `dataset`.
///
/// Edge type names are resolved through the model's map (unknown names use
/// the reserved row) and values are normalised with the model's statistics,
/// so the same call serves in-domain and cross-graph evaluation.
pub fn evaluate(model: &TrainedModel, dataset: &TrajectoryDataset, horizon: usize) -> Result<Vec<f64>, TrainError> {
    evaluate_split(model, dataset, Split::Test, horizon)
}

/// Applies a model trained on one graph to a dataset on another graph without refitting.
pub fn evaluate_inductive(
    model: &TrainedModel,
    dataset: &TrajectoryDataset,
    horizon: usize,
) -> Result<Vec<f64>, TrainError> {
    evaluate(model, dataset, horizon)
}

pub fn evaluate_split(
    model: &TrainedModel,
    dataset: &TrajectoryDataset,
    split: Split,
    horizon: usize,
) -> Result<Vec<f64>, TrainError> {
    if horizon == 0 {
        return Err(ModelError::ZeroHorizon.into());
    }
    let cfg = model.config();
    if cfg.d_in != dataset.d_in() {
        return Err(ModelError::FeatureDimMismatch { expected: cfg.d_in, got: dataset.d_in() }.into());
    }
    if cfg.d_out != dataset.d_out() {
        return Err(ModelError::FeatureDimMismatch { expected: cfg.d_out, got: dataset.d_out() }.into());
    }
    let remapped = dataset.remap_edge_types(&model.edge_type_map, false)?;
    let prep = Prepared::new(&remapped, cfg.n_edge_types, model.normalizer.as_ref());
    let windows = prep.windows(split, horizon);
    if windows.is_empty() {
        return Err(TrainError::NoWindows { split, horizon });
    }
    prep.step_mse(model.kind, &model.params, &windows, horizon)
}

/// Decoded predictions for `horizon` steps starting from the features at time `start`
/// of sequence `seq`, in normalised units.
pub fn predict(
    model: &TrainedModel,
    dataset: &TrajectoryDataset,
    seq: usize,
    start: usize,
    horizon: usize,
) -> Result<Vec<Tensor>, TrainError> {
    let remapped = dataset.remap_edge_types(&model.edge_type_map, false)?;
    let prep = Prepared::new(&remapped, model.config().n_edge_types, model.normalizer.as_ref());
    let mut tape = Tape::new();
    let p = model.params.bind_constant(&mut tape);
    let x = tape.constant(prep.features[seq][start].clone());
    let fwd = forward(&mut tape, &prep.ctx, model.kind, &p, x, horizon)?;
    Ok(fwd.predictions.iter().map(|&v| tape.value(v).clone()).collect())
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    (m, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: usize,
    pub mse: f64,
    pub std: f64,
}

/// Runs `job` once per seed (in parallel) and returns results in seed order.
pub fn run_seeds<T, F>(seeds: &[u64], job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    seeds.par_iter().map(|&s| job(s)).collect()
}

/// For each horizon `h` in `1..=max_horizon` and each seed, trains with
/// rollout length `h` and records the mean test MSE over the `h` steps.
pub fn horizon_sweep(
    dataset: &TrajectoryDataset,
    base: &TrainConfig,
    kind: ModelKind,
    max_horizon: usize,
    seeds: &[u64],
) -> Result<Vec<HorizonRow>, TrainError> {
    let mut rows = Vec::with_capacity(max_horizon);
    for h in 1..=max_horizon {
        let per_seed = run_seeds(seeds, |seed| -> Result<f64, TrainError> {
            let cfg = TrainConfig { horizon: h, seed, ..base.clone() };
            let outcome = train(dataset, &cfg, kind)?;
            Ok(mean(&evaluate(&outcome.model, dataset, h)?))
        });
        let values = per_seed.into_iter().collect::<Result<Vec<f64>, _>>()?;
        let (mse, std) = mean_std(&values);
        rows.push(HorizonRow { horizon: h, mse, std });
    }
    Ok(rows)
}
