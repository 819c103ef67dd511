//! Trained model bundle and its JSON checkpoint.
//!
//! ```json
//! {
//!   "format": "dpgn-checkpoint",
//!   "version": 1,
//!   "kind": "dpgn",
//!   "model_config": {"d_in": 1, "d_h": 16, "d_out": 1, "n_edge_types": 2},
//!   "alpha": 0.001,
//!   "edge_type_map": {"default": 1},
//!   "normalizer": null,
//!   "params": [{"name": "node_encoder.w", "shape": [1, 16], "data": [...]}, ...]
//! }
//! ```
//! Parameter names follow [`ModelParams::named`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::Normalizer;
use crate::model::{ModelConfig, ModelKind, ModelParams};

pub const CHECKPOINT_FORMAT: &str = "dpgn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {0} not found")]
    Missing(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Everything needed to apply a trained network to new data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub alpha: f64,
    pub edge_type_map: BTreeMap<String, usize>,
    pub normalizer: Option<Normalizer>,
    pub params: ModelParams<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    kind: ModelKind,
    model_config: ModelConfig,
    alpha: f64,
    edge_type_map: BTreeMap<String, usize>,
    normalizer: Option<Normalizer>,
    params: Vec<NamedArray>,
}

impl TrainedModel {
    pub fn config(&self) -> ModelConfig {
        self.params.config()
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            model_config: self.config(),
            alpha: self.alpha,
            edge_type_map: self.edge_type_map.clone(),
            normalizer: self.normalizer.clone(),
            params: self
                .params
                .named()
                .into_iter()
                .map(|(name, t)| NamedArray { name, shape: t.shape().to_vec(), data: t.data().to_vec() })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Malformed(format!(
                "unsupported format {:?} version {}",
                file.format, file.version
            )));
        }
        let mut arrays: BTreeMap<String, NamedArray> = file.params.into_iter().map(|a| (a.name.clone(), a)).collect();
        let template = ModelParams::zeros(&file.model_config);
        let names: Vec<(String, Vec<usize>)> =
            template.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        let mut loaded = Vec::with_capacity(names.len());
        for (name, shape) in names {
            let arr = arrays
                .remove(&name)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing parameter {name}")))?;
            if arr.shape != shape {
                return Err(CheckpointError::Malformed(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    arr.shape
                )));
            }
            let t = Tensor::new(arr.shape, arr.data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            loaded.push(t);
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(CheckpointError::Malformed(format!("unexpected parameter {extra}")));
        }
        let mut params = template;
        let mut it = loaded.into_iter();
        params.visit_mut(&mut |t| *t = it.next().expect("one tensor per slot"));
        Ok(Self {
            kind: file.kind,
            alpha: file.alpha,
            edge_type_map: file.edge_type_map,
            normalizer: file.normalizer,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json())
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| match source.kind() {
            std::io::ErrorKind::NotFound => CheckpointError::Missing(path.display().to_string()),
            _ => CheckpointError::Io { path: path.display().to_string(), source },
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sample() -> TrainedModel {
        let cfg = ModelConfig { d_in: 2, d_h: 3, d_out: 1, n_edge_types: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        TrainedModel {
            kind: ModelKind::GnSkip,
            alpha: 0.01,
            edge_type_map: [("road".to_string(), 1)].into_iter().collect(),
            normalizer: Some(Normalizer::identity(2, 1)),
            params: ModelParams::init(&cfg, &mut rng),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = sample();
        assert_eq!(TrainedModel::from_json(&m.to_json()).unwrap(), m);
    }

    #[test]
    fn missing_file_and_bad_contents() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            TrainedModel::load(&dir.path().join("nope.json")),
            Err(CheckpointError::Missing(_))
        ));
        let text = sample().to_json().replace("\"version\":1", "\"version\":9");
        assert!(matches!(TrainedModel::from_json(&text), Err(CheckpointError::Malformed(_))));
        let text = sample().to_json().replace("node_decoder.b", "decoder.b");
        assert!(matches!(TrainedModel::from_json(&text), Err(CheckpointError::Malformed(_))));
    }
}
