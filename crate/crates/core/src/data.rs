//! Datasets, splits, normalisation and their on-disk formats.
//!
//! A dataset directory holds
//! * `graph.json`: `{"n_nodes": n, "edges": [[i, j, w], ...], "triangle_weights": [[i, j, k, w], ...]}`
//! * `edge_types.csv`: `i,j,type`
//! * `features.csv`: `sequence_id,t,node_id,f1..fk`
//! * `targets.csv`: `sequence_id,t,node_id,y1..ym`
//! * `manifest.json`: a [`DatasetManifest`] with `schema_version` 1.
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces raw arrays bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
/// Edge-type id shared by every edge type name missing from a map.
pub const UNKNOWN_EDGE_TYPE: usize = 0;
const DEFAULT_EDGE_TYPE: &str = "default";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    ParseError {
        path: String,
        line: u64,
        message: String,
    },
    #[error("sequence {sequence}: {message}")]
    MisalignedTime { sequence: usize, message: String },
    #[error("edge type {0:?} is not in the closed edge-type map")]
    UnknownEdgeTypeName(String),
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid split fractions {0:?}: need positive values summing to 1")]
    BadFractions([f64; 3]),
    #[error("unsupported manifest schema_version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.65, val: 0.10, test: 0.25 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DataError> {
        let f = [train, val, test];
        if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (train + val + test - 1.0).abs() > 1e-9 {
            return Err(DataError::BadFractions(f));
        }
        Ok(Self { train, val, test })
    }

    /// Chronological tags for a sequence of `len` steps: train first, then val, then test.
    pub fn assign(&self, len: usize) -> Vec<Split> {
        let n_train = ((len as f64) * self.train).round() as usize;
        let n_val = ((len as f64) * self.val).round() as usize;
        let n_train = n_train.min(len);
        let n_val = n_val.min(len - n_train);
        (0..len)
            .map(|t| {
                if t < n_train {
                    Split::Train
                } else if t < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect()
    }
}

impl TryFrom<[f64; 3]> for SplitFractions {
    type Error = DataError;
    fn try_from(f: [f64; 3]) -> Result<Self, DataError> {
        Self::new(f[0], f[1], f[2])
    }
}

impl From<SplitFractions> for [f64; 3] {
    fn from(s: SplitFractions) -> Self {
        [s.train, s.val, s.test]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NormalizationKind {
    #[default]
    #[serde(rename = "zscore")]
    ZScore,
    #[serde(rename = "none")]
    None,
}

/// Per-channel z-score statistics fitted on training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

fn channel_stats<'a>(blocks: impl Iterator<Item = ndarray::ArrayView2<'a, f64>>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut count = 0usize;
    for block in blocks {
        for row in block.rows() {
            for (c, v) in row.iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            count += 1;
        }
    }
    let count = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let var = (s / count - m * m).max(0.0);
            if var.sqrt() < 1e-12 {
                1.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(d_in: usize, d_out: usize) -> Self {
        Self {
            feature_mean: vec![0.0; d_in],
            feature_std: vec![1.0; d_in],
            target_mean: vec![0.0; d_out],
            target_std: vec![1.0; d_out],
        }
    }

    /// Fits statistics on the time steps tagged [`Split::Train`].
    pub fn fit(sequences: &[Sequence], splits: &[Vec<Split>]) -> Self {
        let d_in = sequences[0].d_in();
        let d_out = sequences[0].d_out();
        let train_steps = |arr: fn(&Sequence) -> &Array3<f64>| {
            sequences.iter().zip(splits).flat_map(move |(s, tags)| {
                tags.iter()
                    .enumerate()
                    .filter(|(_, &tag)| tag == Split::Train)
                    .map(move |(t, _)| arr(s).index_axis(Axis(0), t))
            })
        };
        let (feature_mean, feature_std) = channel_stats(train_steps(|s| &s.features), d_in);
        let (target_mean, target_std) = channel_stats(train_steps(|s| &s.targets), d_out);
        Self { feature_mean, feature_std, target_mean, target_std }
    }

    fn apply(arr: &Array3<f64>, mean: &[f64], std: &[f64]) -> Array3<f64> {
        let mut out = arr.clone();
        for mut lane in out.lanes_mut(Axis(2)) {
            for (c, v) in lane.iter_mut().enumerate() {
                *v = (*v - mean[c]) / std[c];
            }
        }
        out
    }

    fn invert(arr: &Array3<f64>, mean: &[f64], std: &[f64]) -> Array3<f64> {
        let mut out = arr.clone();
        for mut lane in out.lanes_mut(Axis(2)) {
            for (c, v) in lane.iter_mut().enumerate() {
                *v = *v * std[c] + mean[c];
            }
        }
        out
    }

    pub fn normalize(&self, seq: &Sequence) -> Sequence {
        Sequence {
            id: seq.id,
            features: Self::apply(&seq.features, &self.feature_mean, &self.feature_std),
            targets: Self::apply(&seq.targets, &self.target_mean, &self.target_std),
        }
    }

    pub fn denormalize(&self, seq: &Sequence) -> Sequence {
        Sequence {
            id: seq.id,
            features: Self::invert(&seq.features, &self.feature_mean, &self.feature_std),
            targets: Self::invert(&seq.targets, &self.target_mean, &self.target_std),
        }
    }

    /// Maps normalised target values of channel `c` back to raw units.
    pub fn denormalize_target(&self, c: usize, value: f64) -> f64 {
        value * self.target_std[c] + self.target_mean[c]
    }
}

/// One time series of node observations; arrays are `time x nodes x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: usize,
    pub features: Array3<f64>,
    pub targets: Array3<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.features.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_in(&self) -> usize {
        self.features.dim().2
    }

    pub fn d_out(&self) -> usize {
        self.targets.dim().2
    }
}

/// A graph with per-edge types and time-major node observations.
///
/// Raw (un-normalised) arrays are kept; normalised views are produced on
/// demand so that saving stays exact.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    graph: Graph,
    edge_type_names: Vec<String>,
    edge_type_map: BTreeMap<String, usize>,
    edge_types: Vec<usize>,
    sequences: Vec<Sequence>,
    splits: Vec<Vec<Split>>,
    fractions: SplitFractions,
    normalization: NormalizationKind,
    normalizer: Option<Normalizer>,
}

impl TrajectoryDataset {
    /// Validates the sequences, assigns splits and fits normalisation.
    /// Edge type ids are assigned `1..` over the sorted distinct names.
    pub fn new(
        graph: Graph,
        edge_type_names: Vec<String>,
        sequences: Vec<Sequence>,
        fractions: SplitFractions,
        normalization: NormalizationKind,
    ) -> Result<Self, DataError> {
        let mut distinct: Vec<&String> = edge_type_names.iter().collect();
        distinct.sort();
        distinct.dedup();
        let map = distinct
            .into_iter()
            .enumerate()
            .map(|(k, name)| (name.clone(), k + 1))
            .collect();
        Self::with_map(graph, edge_type_names, map, false, sequences, fractions, normalization)
    }

    /// Like [`TrajectoryDataset::new`] with an explicit edge-type map. Names
    /// missing from an open map resolve to [`UNKNOWN_EDGE_TYPE`].
    pub fn with_map(
        graph: Graph,
        edge_type_names: Vec<String>,
        edge_type_map: BTreeMap<String, usize>,
        map_closed: bool,
        sequences: Vec<Sequence>,
        fractions: SplitFractions,
        normalization: NormalizationKind,
    ) -> Result<Self, DataError> {
        if sequences.is_empty() || sequences.iter().any(|s| s.is_empty()) {
            return Err(DataError::EmptyDataset);
        }
        if edge_type_names.len() != graph.n_edges() {
            return Err(DataError::ShapeMismatch(format!(
                "{} edge types for {} edges",
                edge_type_names.len(),
                graph.n_edges()
            )));
        }
        let (d_in, d_out) = (sequences[0].d_in(), sequences[0].d_out());
        for s in &sequences {
            let (tf, nf, _) = s.features.dim();
            let (tt, nt, _) = s.targets.dim();
            if tf != tt {
                return Err(DataError::MisalignedTime {
                    sequence: s.id,
                    message: format!("{tf} feature steps vs {tt} target steps"),
                });
            }
            if nf != graph.n_nodes() || nt != graph.n_nodes() {
                return Err(DataError::ShapeMismatch(format!(
                    "sequence {} has {nf}/{nt} nodes, graph has {}",
                    s.id,
                    graph.n_nodes()
                )));
            }
            if s.d_in() != d_in || s.d_out() != d_out {
                return Err(DataError::ShapeMismatch(format!(
                    "sequence {} channel counts differ from sequence {}",
                    s.id, sequences[0].id
                )));
            }
        }
        let edge_types = resolve_edge_types(&edge_type_names, &edge_type_map, map_closed)?;
        let splits: Vec<Vec<Split>> = sequences.iter().map(|s| fractions.assign(s.len())).collect();
        let normalizer = match normalization {
            NormalizationKind::ZScore => Some(Normalizer::fit(&sequences, &splits)),
            NormalizationKind::None => None,
        };
        Ok(Self {
            graph,
            edge_type_names,
            edge_type_map,
            edge_types,
            sequences,
            splits,
            fractions,
            normalization,
            normalizer,
        })
    }

    /// Re-resolves edge type names against another map (e.g. the one a model was trained with).
    pub fn remap_edge_types(&self, map: &BTreeMap<String, usize>, closed: bool) -> Result<Self, DataError> {
        let mut out = self.clone();
        out.edge_types = resolve_edge_types(&self.edge_type_names, map, closed)?;
        out.edge_type_map = map.clone();
        Ok(out)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn edge_type_names(&self) -> &[String] {
        &self.edge_type_names
    }

    pub fn edge_type_map(&self) -> &BTreeMap<String, usize> {
        &self.edge_type_map
    }

    /// Resolved type id per canonical edge.
    pub fn edge_types(&self) -> &[usize] {
        &self.edge_types
    }

    /// Rows needed in an embedding table: largest id + 1.
    pub fn n_edge_types(&self) -> usize {
        self.edge_type_map.values().copied().max().unwrap_or(0) + 1
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn splits(&self) -> &[Vec<Split>] {
        &self.splits
    }

    pub fn fractions(&self) -> SplitFractions {
        self.fractions
    }

    pub fn normalization(&self) -> NormalizationKind {
        self.normalization
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn d_in(&self) -> usize {
        self.sequences[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.sequences[0].d_out()
    }

    /// Sequences mapped through `normalizer`, or through the dataset's own
    /// statistics when `None`; raw sequences when no normalisation applies.
    pub fn normalized_sequences(&self, normalizer: Option<&Normalizer>) -> Vec<Sequence> {
        match normalizer.or(self.normalizer.as_ref()) {
            Some(n) => self.sequences.iter().map(|s| n.normalize(s)).collect(),
            None => self.sequences.clone(),
        }
    }
}

fn resolve_edge_types(
    names: &[String],
    map: &BTreeMap<String, usize>,
    closed: bool,
) -> Result<Vec<usize>, DataError> {
    names
        .iter()
        .map(|name| match map.get(name) {
            Some(&id) => Ok(id),
            None if closed => Err(DataError::UnknownEdgeTypeName(name.clone())),
            None => Ok(UNKNOWN_EDGE_TYPE),
        })
        .collect()
}

/// Pointer file describing a dataset directory. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub graph_path: PathBuf,
    pub features_path: PathBuf,
    pub targets_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_types_path: Option<PathBuf>,
    #[serde(default)]
    pub edge_type_map: BTreeMap<String, usize>,
    #[serde(default)]
    pub edge_type_map_closed: bool,
    #[serde(default)]
    pub split_fractions: SplitFractions,
    #[serde(default)]
    pub normalization: NormalizationKind,
}

/// `[i, j]` (unit weight) or `[i, j, w]`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum EdgeEntry {
    Weighted(usize, usize, f64),
    Unweighted(usize, usize),
}

impl EdgeEntry {
    fn parts(&self) -> (usize, usize, f64) {
        match *self {
            EdgeEntry::Weighted(i, j, w) => (i, j, w),
            EdgeEntry::Unweighted(i, j) => (i, j, 1.0),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    n_nodes: usize,
    edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    triangle_weights: Option<Vec<(usize, usize, usize, f64)>>,
}

pub fn graph_from_json(text: &str) -> Result<Graph, DataError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| DataError::ParseError {
        path: "graph json".into(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let parts: Vec<(usize, usize, f64)> = file.edges.iter().map(EdgeEntry::parts).collect();
    let edges: Vec<(usize, usize)> = parts.iter().map(|&(i, j, _)| (i, j)).collect();
    let weights: Vec<f64> = parts.iter().map(|e| e.2).collect();
    let tw: Option<HashMap<[usize; 3], f64>> = file
        .triangle_weights
        .map(|list| list.into_iter().map(|(i, j, k, w)| ([i, j, k], w)).collect());
    Ok(Graph::new(file.n_nodes, &edges, Some(&weights), tw.as_ref())?)
}

pub fn graph_to_json(g: &Graph) -> String {
    let triangle_weights = if g.triangle_weights().iter().any(|&w| w != 1.0) {
        Some(
            g.triangles()
                .iter()
                .zip(g.triangle_weights())
                .map(|(t, &w)| (t[0], t[1], t[2], w))
                .collect(),
        )
    } else {
        None
    };
    let file = GraphFile {
        n_nodes: g.n_nodes(),
        edges: g.edges().iter().zip(g.edge_weights()).map(|(&(i, j), &w)| EdgeEntry::Weighted(i, j, w)).collect(),
        triangle_weights,
    };
    serde_json::to_string_pretty(&file).expect("graph serializes")
}

pub fn load_graph(path: &Path) -> Result<Graph, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    graph_from_json(&text).map_err(|e| match e {
        DataError::ParseError { line, message, .. } => DataError::ParseError {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| DataError::ParseError {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(DataError::SchemaVersion(manifest.schema_version));
    }
    Ok(manifest)
}

/// Loads the dataset described by the manifest at `manifest_path`.
pub fn load_dataset_from(manifest_path: &Path) -> Result<TrajectoryDataset, DataError> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_dataset(&manifest, base)
}

pub fn load_dataset(manifest: &DatasetManifest, base: &Path) -> Result<TrajectoryDataset, DataError> {
    let graph = load_graph(&base.join(&manifest.graph_path))?;
    let names = match &manifest.edge_types_path {
        Some(p) => read_edge_types(&base.join(p), &graph)?,
        None => vec![DEFAULT_EDGE_TYPE.to_string(); graph.n_edges()],
    };
    let features = read_node_table(&base.join(&manifest.features_path), graph.n_nodes())?;
    let targets = read_node_table(&base.join(&manifest.targets_path), graph.n_nodes())?;

    let feature_ids: Vec<usize> = features.keys().copied().collect();
    let target_ids: Vec<usize> = targets.keys().copied().collect();
    if feature_ids != target_ids {
        return Err(DataError::MisalignedTime {
            sequence: feature_ids.iter().chain(&target_ids).copied().min().unwrap_or(0),
            message: format!("feature sequences {feature_ids:?} vs target sequences {target_ids:?}"),
        });
    }
    let mut sequences = Vec::new();
    for (id, f) in features {
        let t = targets.get(&id).expect("ids checked").clone();
        if f.dim().0 != t.dim().0 {
            return Err(DataError::MisalignedTime {
                sequence: id,
                message: format!("{} feature steps vs {} target steps", f.dim().0, t.dim().0),
            });
        }
        sequences.push(Sequence { id, features: f, targets: t });
    }

    if manifest.edge_type_map.is_empty() {
        TrajectoryDataset::new(graph, names, sequences, manifest.split_fractions, manifest.normalization)
    } else {
        TrajectoryDataset::with_map(
            graph,
            names,
            manifest.edge_type_map.clone(),
            manifest.edge_type_map_closed,
            sequences,
            manifest.split_fractions,
            manifest.normalization,
        )
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> DataError {
    DataError::ParseError { path: path.display().to_string(), line, message: message.into() }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn read_edge_types(path: &Path, graph: &Graph) -> Result<Vec<String>, DataError> {
    let mut reader = csv_reader(path)?;
    let mut names: Vec<Option<String>> = vec![None; graph.n_edges()];
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        if record.len() != 3 {
            return Err(parse_err(path, line, "expected i,j,type"));
        }
        let i: usize = record[0].trim().parse().map_err(|_| parse_err(path, line, "bad node index"))?;
        let j: usize = record[1].trim().parse().map_err(|_| parse_err(path, line, "bad node index"))?;
        let Some(k) = graph.edge_index(i, j) else {
            return Err(parse_err(path, line, format!("{{{i}, {j}}} is not an edge")));
        };
        names[k] = Some(record[2].trim().to_string());
    }
    names
        .into_iter()
        .enumerate()
        .map(|(k, n)| {
            n.ok_or_else(|| {
                let (i, j) = graph.edges()[k];
                parse_err(path, 0, format!("missing type for edge {{{i}, {j}}}"))
            })
        })
        .collect()
}

/// Rows of one time step, indexed by node; `None` until the node's row is read.
type StepRows = Vec<Option<Vec<f64>>>;

/// Parses `sequence_id,t,node_id,v1..vk` into one `time x nodes x k` array per sequence.
fn read_node_table(path: &Path, n_nodes: usize) -> Result<BTreeMap<usize, Array3<f64>>, DataError> {
    let mut reader = csv_reader(path)?;
    let width = reader.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.len();
    if width < 4 {
        return Err(parse_err(path, 1, "expected sequence_id,t,node_id and at least one value column"));
    }
    let k = width - 3;
    // sequence -> t -> node -> values
    let mut raw: BTreeMap<usize, BTreeMap<usize, StepRows>> = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        if record.len() != width {
            return Err(parse_err(path, line, format!("expected {width} fields, got {}", record.len())));
        }
        let int = |idx: usize, what: &str| -> Result<usize, DataError> {
            record[idx]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad {what} {:?}", &record[idx])))
        };
        let (seq, t, node) = (int(0, "sequence_id")?, int(1, "t")?, int(2, "node_id")?);
        if node >= n_nodes {
            return Err(parse_err(path, line, format!("node_id {node} out of range")));
        }
        let values = (3..width)
            .map(|c| {
                let v: f64 = record[c]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("bad value {:?}", &record[c])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, line, "non-finite value"))
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let slot = raw
            .entry(seq)
            .or_default()
            .entry(t)
            .or_insert_with(|| vec![None; n_nodes]);
        if slot[node].is_some() {
            return Err(parse_err(path, line, format!("duplicate row for sequence {seq}, t {t}, node {node}")));
        }
        slot[node] = Some(values);
    }

    let mut out = BTreeMap::new();
    for (seq, steps) in raw {
        let len = steps.len();
        if steps.keys().copied().ne(0..len) {
            return Err(DataError::MisalignedTime {
                sequence: seq,
                message: format!("{}: time index is not contiguous from 0", path.display()),
            });
        }
        let mut arr = Array3::zeros((len, n_nodes, k));
        for (t, nodes) in steps {
            for (i, values) in nodes.into_iter().enumerate() {
                let values = values.ok_or_else(|| DataError::MisalignedTime {
                    sequence: seq,
                    message: format!("{}: node {i} missing at t {t}", path.display()),
                })?;
                for (c, v) in values.into_iter().enumerate() {
                    arr[(t, i, c)] = v;
                }
            }
        }
        out.insert(seq, arr);
    }
    Ok(out)
}

fn write_node_table(path: &Path, prefix: &str, sequences: &[Sequence], pick: fn(&Sequence) -> &Array3<f64>) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let k = pick(&sequences[0]).dim().2;
    let mut header = vec!["sequence_id".to_string(), "t".into(), "node_id".into()];
    header.extend((1..=k).map(|c| format!("{prefix}{c}")));
    let wrap = |e: csv::Error| DataError::Io { path: path.display().to_string(), source: e.into() };
    w.write_record(&header).map_err(wrap)?;
    for s in sequences {
        let arr = pick(s);
        let (steps, nodes, _) = arr.dim();
        for t in 0..steps {
            for i in 0..nodes {
                let mut rec = vec![s.id.to_string(), t.to_string(), i.to_string()];
                rec.extend((0..k).map(|c| arr[(t, i, c)].to_string()));
                w.write_record(&rec).map_err(wrap)?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes raw arrays, graph, edge types and a manifest into `dir`.
pub fn save_dataset(dataset: &TrajectoryDataset, dir: &Path) -> Result<DatasetManifest, DataError> {
    if dataset.sequences.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        graph_path: "graph.json".into(),
        features_path: "features.csv".into(),
        targets_path: "targets.csv".into(),
        edge_types_path: Some("edge_types.csv".into()),
        edge_type_map: dataset.edge_type_map.clone(),
        edge_type_map_closed: false,
        split_fractions: dataset.fractions,
        normalization: dataset.normalization,
    };

    let graph_path = dir.join(&manifest.graph_path);
    fs::write(&graph_path, graph_to_json(&dataset.graph)).map_err(io_err(&graph_path))?;

    let types_path = dir.join("edge_types.csv");
    let mut text = String::from("i,j,type\n");
    for (&(i, j), name) in dataset.graph.edges().iter().zip(&dataset.edge_type_names) {
        text.push_str(&format!("{i},{j},{name}\n"));
    }
    fs::write(&types_path, text).map_err(io_err(&types_path))?;

    write_node_table(&dir.join(&manifest.features_path), "f", &dataset.sequences, |s| &s.features)?;
    write_node_table(&dir.join(&manifest.targets_path), "y", &dataset.sequences, |s| &s.targets)?;

    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(io_err(&manifest_path))?;
    Ok(manifest)
}
