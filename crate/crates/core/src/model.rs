//! Encoder, recurrent graph-network core, decoder and the training losses.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::UNKNOWN_EDGE_TYPE;
use crate::gn::{gn_skip_step, gn_step, Dense, GnParams, LatentState, Topology};
use crate::graph::Graph;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("physics loss needs at least 2 latent states, got {0}")]
    TooFewStates(usize),
    #[error("feature dimension mismatch: model expects {expected}, data has {got}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("the MLP baseline only predicts one step ahead, horizon {0} requested")]
    MlpMultistep(usize),
    #[error("{0} predictions but {1} targets")]
    TargetCountMismatch(usize, usize),
}

/// Which network is trained; the baselines share all code with the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Graph network with the latent diffusion penalty.
    Dpgn,
    /// Same network without the penalty.
    GnOnly,
    /// Residual core `H + GN(H)` without the penalty.
    GnSkip,
    /// Per-node encoder and decoder with no message passing; one step only.
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Dpgn, ModelKind::GnOnly, ModelKind::GnSkip, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dpgn => "dpgn",
            ModelKind::GnOnly => "gn-only",
            ModelKind::GnSkip => "gn-skip",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn uses_physics(self) -> bool {
        self == ModelKind::Dpgn
    }

    pub fn skip(self) -> bool {
        self == ModelKind::GnSkip
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model {s:?}; expected one of dpgn, gn-only, gn-skip, mlp"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_h: usize,
    pub d_out: usize,
    /// Rows of the edge embedding table, including the reserved unknown row 0.
    pub n_edge_types: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<P> {
    pub node_encoder: Dense<P>,
    pub edge_embed: P,
    pub gn: GnParams<P>,
    pub node_decoder: Dense<P>,
}

impl ModelParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            node_encoder: Dense::init(cfg.d_in, cfg.d_h, true, rng),
            edge_embed: Tensor::glorot(cfg.n_edge_types.max(1), cfg.d_h, rng),
            gn: GnParams::init(cfg.d_h, rng),
            node_decoder: Dense::init(cfg.d_h, cfg.d_out, false, rng),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            node_encoder: Dense::zeros(cfg.d_in, cfg.d_h, true),
            edge_embed: Tensor::zeros(&[cfg.n_edge_types.max(1), cfg.d_h]),
            gn: GnParams::zeros(cfg.d_h),
            node_decoder: Dense::zeros(cfg.d_h, cfg.d_out, false),
        }
    }

    pub fn config(&self) -> ModelConfig {
        let (d_in, d_h) = self.node_encoder.w.dims();
        ModelConfig {
            d_in,
            d_h,
            d_out: self.node_decoder.w.dims().1,
            n_edge_types: self.edge_embed.dims().0,
        }
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    /// Records every parameter as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |t| tape.constant(t.clone()))
    }
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ModelParams<Q> {
        ModelParams {
            node_encoder: self.node_encoder.map(f),
            edge_embed: f(&self.edge_embed),
            gn: self.gn.map(f),
            node_decoder: self.node_decoder.map(f),
        }
    }

    /// Parameters with stable dotted names, in the same order as [`ModelParams::visit_mut`].
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.node_encoder.named("node_encoder", &mut out);
        out.push(("edge_embed".to_string(), &self.edge_embed));
        self.gn.named("gn", &mut out);
        self.node_decoder.named("node_decoder", &mut out);
        out
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        self.node_encoder.visit_mut(f);
        f(&mut self.edge_embed);
        self.gn.visit_mut(f);
        self.node_decoder.visit_mut(f);
    }
}

/// Per-graph constants: directed topology, per-directed-edge type rows and the Laplacian.
#[derive(Debug, Clone)]
pub struct GraphContext {
    topo: Topology,
    edge_rows: Arc<[usize]>,
    laplacian: Tensor,
}

impl GraphContext {
    /// `edge_types` holds one id per canonical edge. Ids outside the
    /// embedding table fall back to the reserved unknown row.
    pub fn new(g: &Graph, edge_types: &[usize], n_edge_types: usize) -> Self {
        assert_eq!(edge_types.len(), g.n_edges(), "one edge type per edge");
        let rows: Vec<usize> = edge_types
            .iter()
            .flat_map(|&t| {
                let t = if t < n_edge_types { t } else { UNKNOWN_EDGE_TYPE };
                [t, t]
            })
            .collect();
        let laplacian = Tensor::from_array2(&g.laplacian_matrix()).expect("finite Laplacian");
        Self { topo: Topology::new(g), edge_rows: rows.into(), laplacian }
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn n_nodes(&self) -> usize {
        self.topo.n_nodes()
    }

    pub fn laplacian(&self) -> &Tensor {
        &self.laplacian
    }
}

/// `node_h = encoder(features)`, `edge_h = embedding[type]`, `global_h = 0`.
pub fn encode(
    tape: &mut Tape,
    ctx: &GraphContext,
    features: Var,
    params: &ModelParams<Var>,
) -> Result<LatentState<Var>, ModelError> {
    let expected = tape.value(params.node_encoder.w).dims().0;
    let (rows, got) = tape.value(features).dims();
    if got != expected {
        return Err(ModelError::FeatureDimMismatch { expected, got });
    }
    if rows != ctx.n_nodes() {
        return Err(AutodiffError::ShapeMismatch {
            op: "encode",
            detail: format!("{rows} feature rows for {} nodes", ctx.n_nodes()),
        }
        .into());
    }
    let d_h = tape.value(params.node_encoder.w).dims().1;
    let node_h = params.node_encoder.apply(tape, features)?;
    let edge_h = tape.gather_rows(params.edge_embed, ctx.edge_rows.clone())?;
    let global_h = tape.constant(Tensor::zeros(&[1, d_h]));
    Ok(LatentState { node_h, edge_h, global_h })
}

/// `steps` applications of the core block; returns `H_1..H_steps`.
pub fn rollout(
    tape: &mut Tape,
    ctx: &GraphContext,
    h0: &LatentState<Var>,
    params: &ModelParams<Var>,
    steps: usize,
    skip: bool,
) -> Result<Vec<LatentState<Var>>, ModelError> {
    if steps == 0 {
        return Err(ModelError::ZeroHorizon);
    }
    let mut states: Vec<LatentState<Var>> = Vec::with_capacity(steps);
    for _ in 0..steps {
        let prev = states.last().unwrap_or(h0);
        let next = if skip {
            gn_skip_step(tape, &ctx.topo, prev, &params.gn)?
        } else {
            gn_step(tape, &ctx.topo, prev, &params.gn)?
        };
        states.push(next);
    }
    Ok(states)
}

/// Row-wise decoder on the node latents.
pub fn decode(tape: &mut Tape, h: &LatentState<Var>, params: &ModelParams<Var>) -> Result<Var, ModelError> {
    Ok(params.node_decoder.apply(tape, h.node_h)?)
}

/// `Σ_i ‖v_i − v_{i−1} + α L v_{i−1}‖²` over consecutive node latents.
pub fn physics_loss(tape: &mut Tape, ctx: &GraphContext, node_states: &[Var], alpha: f64) -> Result<Var, ModelError> {
    if node_states.len() < 2 {
        return Err(ModelError::TooFewStates(node_states.len()));
    }
    let lap = tape.constant(ctx.laplacian.clone());
    let mut terms = Vec::with_capacity(node_states.len() - 1);
    for pair in node_states.windows(2) {
        let lv = tape.matmul(lap, pair[0])?;
        let step = tape.scale(lv, alpha)?;
        let expected = tape.sub(pair[0], step)?;
        terms.push(tape.squared_error(pair[1], expected)?);
    }
    Ok(tape.add_all(&terms)?)
}

/// `Σ ‖ŷ_i − y_i‖² + λ·physics`, skipping unlabeled steps (`None` targets).
pub fn total_loss(
    tape: &mut Tape,
    predictions: &[Var],
    targets: &[Option<Var>],
    physics: Option<Var>,
    lambda: f64,
) -> Result<Var, ModelError> {
    if predictions.len() != targets.len() {
        return Err(ModelError::TargetCountMismatch(predictions.len(), targets.len()));
    }
    let mut terms = Vec::new();
    for (&p, t) in predictions.iter().zip(targets) {
        if let Some(t) = t {
            terms.push(tape.squared_error(p, *t)?);
        }
    }
    if let Some(phys) = physics {
        terms.push(tape.scale(phys, lambda)?);
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    Ok(tape.add_all(&terms)?)
}

/// Predictions and node latents of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Decoded predictions for steps `1..=horizon`.
    pub predictions: Vec<Var>,
    /// Node latents `H_0..H_horizon` (only `H_0` for the MLP baseline).
    pub node_states: Vec<Var>,
}

/// Encodes `features`, rolls the core forward `horizon` steps and decodes each step.
pub fn forward(
    tape: &mut Tape,
    ctx: &GraphContext,
    kind: ModelKind,
    params: &ModelParams<Var>,
    features: Var,
    horizon: usize,
) -> Result<Forward, ModelError> {
    if horizon == 0 {
        return Err(ModelError::ZeroHorizon);
    }
    let h0 = encode(tape, ctx, features, params)?;
    if kind == ModelKind::Mlp {
        if horizon != 1 {
            return Err(ModelError::MlpMultistep(horizon));
        }
        let y = decode(tape, &h0, params)?;
        return Ok(Forward { predictions: vec![y], node_states: vec![h0.node_h] });
    }
    let states = rollout(tape, ctx, &h0, params, horizon, kind.skip())?;
    let mut predictions = Vec::with_capacity(horizon);
    for h in &states {
        predictions.push(decode(tape, h, params)?);
    }
    let mut node_states = vec![h0.node_h];
    node_states.extend(states.iter().map(|h| h.node_h));
    Ok(Forward { predictions, node_states })
}
