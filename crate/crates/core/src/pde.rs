//! Explicit time stepping of diffusion and wave equations on graphs.
//!
//! The continuum Laplacian `∇²` is realised as `-L`, so diffusion
//! `u' = α∇²u` becomes `v ← v - α L v` and the wave equation becomes the
//! leapfrog update `v⁺ = 2v - v⁻ - c² L v`. The time step is 1 and is folded
//! into `α` and `c`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{dirichlet_energy, laplacian_apply, CalculusError, VertexFunction};
use crate::data::{DataError, NormalizationKind, Sequence, SplitFractions, TrajectoryDataset};
use crate::graph::Graph;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error("{kind:?} needs {expected} initial state(s), got {got}")]
    BadInitCount {
        kind: PdeKind,
        expected: usize,
        got: usize,
    },
    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },
    #[error("invalid PDE parameters: {0}")]
    InvalidSpec(String),
    #[error("initial states have different lengths")]
    LengthMismatch,
    #[error("noise_std must be finite and >= 0, got {0}")]
    NegativeNoise(f64),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeKind {
    Diffusion,
    Wave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub kind: PdeKind,
    /// Diffusivity per step.
    pub alpha: f64,
    /// Wave speed per step.
    pub c: f64,
}

impl PdeSpec {
    pub fn diffusion(alpha: f64) -> Self {
        Self { kind: PdeKind::Diffusion, alpha, c: 0.0 }
    }

    pub fn wave(c: f64) -> Self {
        Self { kind: PdeKind::Wave, alpha: 0.0, c }
    }

    /// Highest time-derivative order `M`.
    pub fn order(&self) -> usize {
        match self.kind {
            PdeKind::Diffusion => 1,
            PdeKind::Wave => 2,
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        for (name, v) in [("alpha", self.alpha), ("c", self.c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PdeError::InvalidSpec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Stability margin of the explicit scheme: `α λ_max` against 2 for
    /// diffusion, `c² λ_max` against 4 for the wave update.
    pub fn stability(&self, g: &Graph) -> Stability {
        let lambda_max = g.laplacian_spectral_radius();
        let (value, bound) = match self.kind {
            PdeKind::Diffusion => (self.alpha * lambda_max, 2.0),
            PdeKind::Wave => (self.c * self.c * lambda_max, 4.0),
        };
        Stability { lambda_max, value, bound }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stability {
    pub lambda_max: f64,
    pub value: f64,
    pub bound: f64,
}

impl Stability {
    pub fn is_stable(&self) -> bool {
        self.value < self.bound
    }
}

/// `v - α L v`.
pub fn diffusion_step(g: &Graph, v: &VertexFunction, alpha: f64) -> Result<VertexFunction, PdeError> {
    let lv = laplacian_apply(g, v)?;
    Ok(VertexFunction(&v.0 - &(lv.0 * alpha)))
}

/// `2 v_curr - v_prev - c² L v_curr`.
pub fn wave_step(
    g: &Graph,
    v_prev: &VertexFunction,
    v_curr: &VertexFunction,
    c: f64,
) -> Result<VertexFunction, PdeError> {
    if v_prev.0.dim() != v_curr.0.dim() {
        return Err(PdeError::LengthMismatch);
    }
    let lv = laplacian_apply(g, v_curr)?;
    Ok(VertexFunction(&v_curr.0 * 2.0 - &v_prev.0 - lv.0 * (c * c)))
}

/// Time-ordered states with unit spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<VertexFunction>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Σ_i v_i of each state (all channels).
    pub fn masses(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.0.sum()).collect()
    }

    /// Σ_i v_i² of each state.
    pub fn energies(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.0.iter().map(|v| v * v).sum()).collect()
    }

    pub fn dirichlet_energies(&self, g: &Graph) -> Result<Vec<f64>, PdeError> {
        self.states
            .iter()
            .map(|s| dirichlet_energy(g, s).map_err(PdeError::from))
            .collect()
    }
}

/// Runs `steps` explicit updates from `init` (one state for diffusion, two
/// for the wave equation: `[v_prev, v_curr]`). The result holds
/// `steps + M` states. An unstable parameter choice only logs a warning.
pub fn simulate(
    g: &Graph,
    spec: &PdeSpec,
    init: &[VertexFunction],
    steps: usize,
) -> Result<Trajectory, PdeError> {
    spec.validate()?;
    if init.len() != spec.order() {
        return Err(PdeError::BadInitCount {
            kind: spec.kind,
            expected: spec.order(),
            got: init.len(),
        });
    }
    if init.windows(2).any(|w| w[0].0.dim() != w[1].0.dim()) {
        return Err(PdeError::LengthMismatch);
    }
    if steps > 0 {
        let stability = spec.stability(g);
        if !stability.is_stable() {
            log::warn!(
                "explicit {:?} scheme may be unstable: {:.4} >= {} (lambda_max = {:.4})",
                spec.kind,
                stability.value,
                stability.bound,
                stability.lambda_max
            );
        }
    }

    let mut states = init.to_vec();
    for step in 1..=steps {
        let next = match spec.kind {
            PdeKind::Diffusion => diffusion_step(g, states.last().expect("non-empty"), spec.alpha)?,
            PdeKind::Wave => {
                let n = states.len();
                wave_step(g, &states[n - 2], &states[n - 1], spec.c)?
            }
        };
        if next.0.iter().any(|v| !v.is_finite()) {
            return Err(PdeError::NonFiniteState { step });
        }
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// Settings for [`make_synthetic_dataset`].
#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub spec: PdeSpec,
    pub n_sequences: usize,
    /// Supervised pairs per sequence.
    pub steps: usize,
    pub seed: u64,
    /// Standard deviation of additive Gaussian observation noise.
    pub noise_std: f64,
    /// Height of the localised initial source.
    pub amplitude: f64,
    /// Per-node land types used to label edges; random in `0..n_land_types` when absent.
    pub land_types: Option<Vec<usize>>,
    pub n_land_types: usize,
    /// Static per-node features appended after the state channel (n x s).
    pub static_features: Option<Array2<f64>>,
    pub fractions: SplitFractions,
    pub normalization: NormalizationKind,
}

impl SyntheticConfig {
    pub fn new(spec: PdeSpec, n_sequences: usize, steps: usize, seed: u64) -> Self {
        Self {
            spec,
            n_sequences,
            steps,
            seed,
            noise_std: 0.0,
            amplitude: 1.0,
            land_types: None,
            n_land_types: 1,
            static_features: None,
            fractions: SplitFractions::default(),
            normalization: NormalizationKind::ZScore,
        }
    }
}

/// Edge type label for an edge joining nodes of land types `a` and `b`.
pub fn edge_type_name(a: usize, b: usize) -> String {
    format!("lt{}-lt{}", a.min(b), a.max(b))
}

/// Generates a supervised dataset by simulating localised initial
/// conditions: a one-hot heat source at a random node for diffusion, a
/// pulse released from rest at a random lowest-degree node for the wave
/// equation. Observations get i.i.d. Gaussian noise; each sequence holds
/// `steps` pairs (state at t -> state at t + 1). Deterministic in `seed`.
pub fn make_synthetic_dataset(g: &Graph, cfg: &SyntheticConfig) -> Result<TrajectoryDataset, PdeError> {
    cfg.spec.validate()?;
    if !(cfg.noise_std.is_finite() && cfg.noise_std >= 0.0) {
        return Err(PdeError::NegativeNoise(cfg.noise_std));
    }
    let n = g.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let land: Vec<usize> = match &cfg.land_types {
        Some(types) => {
            if types.len() != n {
                return Err(PdeError::InvalidSpec(format!(
                    "{} land types for {n} nodes",
                    types.len()
                )));
            }
            types.clone()
        }
        None => (0..n).map(|_| rng.random_range(0..cfg.n_land_types.max(1))).collect(),
    };
    let edge_names: Vec<String> = g
        .edges()
        .iter()
        .map(|&(i, j)| edge_type_name(land[i], land[j]))
        .collect();

    let static_dim = cfg.static_features.as_ref().map_or(0, |s| s.ncols());
    if let Some(s) = &cfg.static_features {
        if s.nrows() != n {
            return Err(PdeError::InvalidSpec(format!("static features have {} rows", s.nrows())));
        }
    }
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid normal");
    let min_degree = (0..n).map(|i| g.neighbors(i).len()).min().unwrap_or(0);
    let endpoints: Vec<usize> = (0..n).filter(|&i| g.neighbors(i).len() == min_degree).collect();

    let order = cfg.spec.order();
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for id in 0..cfg.n_sequences {
        let init = match cfg.spec.kind {
            PdeKind::Diffusion => {
                let node = rng.random_range(0..n);
                vec![one_hot(n, node, cfg.amplitude)]
            }
            PdeKind::Wave => {
                let node = endpoints[rng.random_range(0..endpoints.len())];
                let pulse = one_hot(n, node, cfg.amplitude);
                vec![pulse.clone(), pulse]
            }
        };
        let traj = simulate(g, &cfg.spec, &init, cfg.steps)?;
        // observed states: from the last initial state onward
        let mut observed: Vec<Vec<f64>> = traj.states[order - 1..]
            .iter()
            .map(|s| s.column().to_vec())
            .collect();
        if cfg.noise_std > 0.0 {
            for state in &mut observed {
                for v in state.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
        }

        let d_in = 1 + static_dim;
        let mut features = Array3::zeros((cfg.steps, n, d_in));
        let mut targets = Array3::zeros((cfg.steps, n, 1));
        for t in 0..cfg.steps {
            for i in 0..n {
                features[(t, i, 0)] = observed[t][i];
                if let Some(s) = &cfg.static_features {
                    for c in 0..static_dim {
                        features[(t, i, 1 + c)] = s[(i, c)];
                    }
                }
                targets[(t, i, 0)] = observed[t + 1][i];
            }
        }
        sequences.push(Sequence { id, features, targets });
    }

    Ok(TrajectoryDataset::new(
        g.clone(),
        edge_names,
        sequences,
        cfg.fractions,
        cfg.normalization,
    )?)
}

fn one_hot(n: usize, node: usize, amplitude: f64) -> VertexFunction {
    let mut v = vec![0.0; n];
    v[node] = amplitude;
    VertexFunction::from_vec(v)
}

/// Sidecar metadata written next to an exported trajectory CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub spec: PdeSpec,
    pub seed: u64,
    pub n_nodes: usize,
    pub n_states: usize,
}

/// Writes `sequence_id,t,node_id,value[,value_k...]` rows.
pub fn write_trajectory_csv<W: Write>(out: W, trajectories: &[(usize, &Trajectory)]) -> Result<(), PdeError> {
    let mut w = csv::Writer::from_writer(out);
    let channels = trajectories
        .first()
        .and_then(|(_, t)| t.states.first())
        .map_or(1, |s| s.channels());
    let mut header = vec!["sequence_id".to_string(), "t".into(), "node_id".into()];
    if channels == 1 {
        header.push("value".into());
    } else {
        header.extend((1..=channels).map(|c| format!("value{c}")));
    }
    w.write_record(&header)?;
    for (seq, traj) in trajectories {
        for (t, state) in traj.states.iter().enumerate() {
            for (i, row) in state.0.rows().into_iter().enumerate() {
                let mut rec = vec![seq.to_string(), t.to_string(), i.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the trajectory CSV and its `.json` sidecar.
pub fn export_trajectory(
    csv_path: &Path,
    traj: &Trajectory,
    spec: &PdeSpec,
    seed: u64,
) -> Result<(), PdeError> {
    let file = std::fs::File::create(csv_path)?;
    write_trajectory_csv(std::io::BufWriter::new(file), &[(0, traj)])?;
    let meta = TrajectoryMeta {
        spec: *spec,
        seed,
        n_nodes: traj.states.first().map_or(0, |s| s.len()),
        n_states: traj.len(),
    };
    let sidecar = csv_path.with_extension("json");
    std::fs::write(sidecar, serde_json::to_string_pretty(&meta).expect("serializable"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{grid, path};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn diffusion_step_examples() {
        let g = path(3);
        let v = VertexFunction::from_vec(vec![1.0, 0.0, 0.0]);
        let next = diffusion_step(&g, &v, 0.1).unwrap();
        assert!(close(&next.column().to_vec(), &[0.9, 0.1, 0.0], 1e-15));
        assert_eq!(diffusion_step(&g, &v, 0.0).unwrap(), v);
        let flat = VertexFunction::from_vec(vec![0.4; 3]);
        assert_eq!(diffusion_step(&g, &flat, 0.37).unwrap(), flat);
    }

    #[test]
    fn wave_step_examples() {
        let g = path(5);
        let flat = VertexFunction::from_vec(vec![1.5; 5]);
        assert_eq!(wave_step(&g, &flat, &flat, 0.7).unwrap(), flat);

        let prev = VertexFunction::from_vec(vec![0.0, 1.0, 2.0, 0.5, 0.0]);
        let curr = VertexFunction::from_vec(vec![1.0, 0.0, 0.5, 2.0, 3.0]);
        let next = wave_step(&g, &prev, &curr, 0.0).unwrap();
        assert_eq!(next.0, &curr.0 * 2.0 - &prev.0);

        // dense matrix oracle
        let pulse = VertexFunction::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let zero = VertexFunction::zeros(5, 1);
        let next = wave_step(&g, &zero, &pulse, 0.5).unwrap();
        let l = g.laplacian_matrix();
        let expected = &pulse.0 * 2.0 - &zero.0 - l.dot(&pulse.0) * 0.25;
        assert!(close(next.0.as_slice().unwrap(), expected.as_slice().unwrap(), 1e-15));
        assert!(close(&next.column().to_vec(), &[0.0, 0.25, 1.5, 0.25, 0.0], 1e-15));
    }

    #[test]
    fn simulate_counts_and_errors() {
        let g = path(4);
        let init = VertexFunction::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let t = simulate(&g, &PdeSpec::diffusion(0.1), std::slice::from_ref(&init), 0).unwrap();
        assert_eq!(t.states, vec![init.clone()]);
        let t = simulate(&g, &PdeSpec::diffusion(0.1), std::slice::from_ref(&init), 7).unwrap();
        assert_eq!(t.len(), 8);
        let t = simulate(&g, &PdeSpec::wave(0.3), &[init.clone(), init.clone()], 7).unwrap();
        assert_eq!(t.len(), 9);

        assert!(matches!(
            simulate(&g, &PdeSpec::wave(0.3), std::slice::from_ref(&init), 3),
            Err(PdeError::BadInitCount { expected: 2, got: 1, .. })
        ));
        assert!(matches!(
            simulate(&g, &PdeSpec::diffusion(-1.0), std::slice::from_ref(&init), 3),
            Err(PdeError::InvalidSpec(_))
        ));
        // far beyond the stability bound the state overflows
        let blown = simulate(&g, &PdeSpec::diffusion(1e100), &[init], 50);
        assert!(matches!(blown, Err(PdeError::NonFiniteState { .. })));
    }

    #[test]
    fn diffusion_conserves_dissipates_and_equilibrates() {
        let g = grid(4, 5);
        let mut v = vec![0.0; 20];
        v[0] = 1.0;
        let traj = simulate(&g, &PdeSpec::diffusion(0.1), &[VertexFunction::from_vec(v)], 2000).unwrap();
        let masses = traj.masses();
        assert!(masses.iter().all(|m| (m - 1.0).abs() < 1e-10));
        let energy = traj.dirichlet_energies(&g).unwrap();
        assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let last = traj.states.last().unwrap();
        assert!(last.0.iter().all(|x| (x - 1.0 / 20.0).abs() < 1e-6));
    }

    #[test]
    fn wave_energy_stays_bounded() {
        let g = path(10);
        let mut pulse = vec![0.0; 10];
        pulse[0] = 1.0;
        let rest = VertexFunction::from_vec(pulse);
        let traj = simulate(&g, &PdeSpec::wave(0.3), &[rest.clone(), rest], 500).unwrap();
        let e0 = traj.energies()[1];
        assert!(traj.energies().iter().all(|&e| e <= 10.0 * e0));
    }

    #[test]
    fn wave_with_zero_speed_extrapolates() {
        let g = path(3);
        let a = VertexFunction::from_vec(vec![0.0, 1.0, 2.0]);
        let b = VertexFunction::from_vec(vec![1.0, 1.5, 2.5]);
        let traj = simulate(&g, &PdeSpec::wave(0.0), &[a, b], 3).unwrap();
        assert_eq!(traj.states[4].column().to_vec(), vec![4.0, 3.0, 4.0]);
    }

    #[test]
    fn synthetic_dataset_is_deterministic_and_sized() {
        let g = grid(5, 6);
        let mut cfg = SyntheticConfig::new(PdeSpec::diffusion(0.1), 3, 20, 7);
        cfg.noise_std = 0.05;
        let a = make_synthetic_dataset(&g, &cfg).unwrap();
        let b = make_synthetic_dataset(&g, &cfg).unwrap();
        assert_eq!(a.sequences(), b.sequences());
        assert_eq!(a.sequences().len(), 3);
        let pairs: usize = a.sequences().iter().map(|s| s.features.dim().0).sum();
        assert_eq!(pairs, 60);
    }

    #[test]
    fn noiseless_pairs_follow_diffusion() {
        let g = grid(3, 4);
        let cfg = SyntheticConfig::new(PdeSpec::diffusion(0.1), 2, 15, 1);
        let ds = make_synthetic_dataset(&g, &cfg).unwrap();
        for seq in ds.sequences() {
            for t in 0..seq.features.dim().0 {
                let v = VertexFunction::from_vec(seq.features.slice(ndarray::s![t, .., 0]).to_vec());
                let next = diffusion_step(&g, &v, 0.1).unwrap();
                let target = seq.targets.slice(ndarray::s![t, .., 0]).to_vec();
                assert_eq!(next.column().to_vec(), target);
                if t + 1 < seq.features.dim().0 {
                    assert_eq!(seq.features.slice(ndarray::s![t + 1, .., 0]).to_vec(), target);
                }
            }
        }
    }

    #[test]
    fn stability_report() {
        let g = path(3);
        assert!(PdeSpec::diffusion(0.5).stability(&g).is_stable());
        assert!(!PdeSpec::diffusion(0.7).stability(&g).is_stable());
        assert!(PdeSpec::wave(1.0).stability(&g).is_stable());
        assert!(!PdeSpec::wave(1.2).stability(&g).is_stable());
    }

    #[test]
    fn trajectory_csv_layout() {
        let g = path(2);
        let traj = simulate(&g, &PdeSpec::diffusion(0.1), &[VertexFunction::from_vec(vec![1.0, 0.0])], 1).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[(3, &traj)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sequence_id,t,node_id,value");
        assert_eq!(lines.len(), 1 + 4);
        assert_eq!(lines[3], "3,1,0,0.9");
    }
}
