//! Versioned checkpoint format: a JSON map of parameter name to shape and
//! values, plus the config snapshot and optimizer state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Optimizer, Tensor};

use super::model::ModelState;
use super::train::optim_config_for;
use super::TrainConfig;

const MAGIC: &str = "hmgrec-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to decode checkpoint: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParamRecord {
    fn from_tensor(name: &str, t: &Tensor) -> Self {
        ParamRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        }
    }

    fn to_tensor(&self) -> Result<Tensor, CheckpointError> {
        if self.shape.len() != 2 {
            return Err(CheckpointError::Invalid(format!(
                "parameter {} has non-matrix shape {:?}",
                self.name, self.shape
            )));
        }
        if self.shape[0] * self.shape[1] != self.values.len() {
            return Err(CheckpointError::Invalid(format!(
                "parameter {} shape/value mismatch",
                self.name
            )));
        }
        let t = Tensor::from_vec(self.shape[0], self.shape[1], self.values.clone());
        t.validate_finite(&format!("checkpoint parameter {}", self.name))
            .map_err(CheckpointError::Invalid)?;
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct OptimizerRecord {
    step: u64,
    m: Vec<ParamRecord>,
    v: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    magic: String,
    version: u32,
    config: TrainConfig,
    n_users: usize,
    n_items: usize,
    n_levels: usize,
    dataset_fingerprint: String,
    /// Whether training ran on the leave-one-out train split (as opposed to
    /// the full dataset).
    trained_on_split: bool,
    params: Vec<ParamRecord>,
    optimizer: Option<OptimizerRecord>,
}

/// A checkpoint read back from disk.
pub struct LoadedCheckpoint {
    pub model: ModelState,
    pub optimizer: Optimizer,
    pub dataset_fingerprint: String,
    pub trained_on_split: bool,
}

/// Serialize a model (and optionally its optimizer state) to the checkpoint
/// JSON format.
pub fn save_checkpoint(
    model: &ModelState,
    optimizer: Option<&Optimizer>,
    dataset_fingerprint: &str,
    trained_on_split: bool,
) -> String {
    let params = model
        .params
        .iter()
        .map(|(_, name, t)| ParamRecord::from_tensor(name, t))
        .collect();
    let optimizer = optimizer.map(|opt| {
        let (m, v) = opt.moments();
        let record = |tensors: &[Tensor]| {
            tensors
                .iter()
                .zip(model.params.iter())
                .map(|(t, (_, name, _))| ParamRecord::from_tensor(name, t))
                .collect()
        };
        OptimizerRecord {
            step: opt.step_count(),
            m: record(m),
            v: record(v),
        }
    });
    let file = CheckpointFile {
        magic: MAGIC.to_string(),
        version: VERSION,
        config: model.config.clone(),
        n_users: model.n_users,
        n_items: model.n_items,
        n_levels: model.n_levels,
        dataset_fingerprint: dataset_fingerprint.to_string(),
        trained_on_split,
        params,
        optimizer,
    };
    serde_json::to_string(&file).expect("checkpoint serialization cannot fail")
}

/// Rebuild a model from checkpoint JSON: the layout is re-derived from the
/// config snapshot, then every tensor is overwritten by name.
pub fn load_checkpoint(text: &str) -> Result<LoadedCheckpoint, CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.magic != MAGIC {
        return Err(CheckpointError::Invalid(format!(
            "bad magic {:?}",
            file.magic
        )));
    }
    if file.version != VERSION {
        return Err(CheckpointError::Invalid(format!(
            "unsupported version {}",
            file.version
        )));
    }
    let mut model = ModelState::init(file.n_users, file.n_items, file.n_levels, &file.config);
    if file.params.len() != model.params.len() {
        return Err(CheckpointError::Invalid(format!(
            "expected {} parameters, found {}",
            model.params.len(),
            file.params.len()
        )));
    }
    for record in &file.params {
        let id = model.params.find(&record.name).ok_or_else(|| {
            CheckpointError::Invalid(format!("unknown parameter {}", record.name))
        })?;
        let tensor = record.to_tensor()?;
        if tensor.shape() != model.params.get(id).shape() {
            return Err(CheckpointError::Invalid(format!(
                "parameter {} has shape {:?}, expected {:?}",
                record.name,
                tensor.shape(),
                model.params.get(id).shape()
            )));
        }
        *model.params.get_mut(id) = tensor;
    }

    let mut optimizer = Optimizer::new(optim_config_for(&model.config), &model.params);
    if let Some(record) = &file.optimizer {
        // moment tensors mirror the parameter registry, in order
        let restore = |records: &[ParamRecord]| -> Result<Vec<Tensor>, CheckpointError> {
            if records.len() != model.params.len() {
                return Err(CheckpointError::Invalid(
                    "optimizer state does not match the parameter count".into(),
                ));
            }
            records
                .iter()
                .zip(model.params.iter())
                .map(|(r, (_, name, p))| {
                    let t = r.to_tensor()?;
                    if r.name != name || t.shape() != p.shape() {
                        return Err(CheckpointError::Invalid(format!(
                            "optimizer state for {} does not match parameter {}",
                            r.name, name
                        )));
                    }
                    Ok(t)
                })
                .collect()
        };
        optimizer.restore_state(restore(&record.m)?, restore(&record.v)?, record.step);
    }

    Ok(LoadedCheckpoint {
        model,
        optimizer,
        dataset_fingerprint: file.dataset_fingerprint,
        trained_on_split: file.trained_on_split,
    })
}
