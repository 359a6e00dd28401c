//! TOML run configuration and its mapping onto the library config types.
//!
//! Every training hyperparameter is a key with its standard default; unknown
//! keys are fatal rather than silently ignored.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use hmgrec::autodiff::OptimizerKind;
use hmgrec::encoders::{EncoderConfig, ReadoutKind};
use hmgrec::ingest::{BehaviorVocab, ColumnSchema};
use hmgrec::recommender::{FusionConfig, TrainConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Behavior names ordered weakest-first; the last one is the target.
    pub vocabulary: Vec<String>,
    pub min_target_interactions: usize,
    /// Drop users with more page-view records than this, when set.
    pub max_pv_per_user: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            vocabulary: vec!["pv".into(), "fav".into(), "cart".into(), "buy".into()],
            min_target_interactions: 5,
            max_pv_per_user: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub beta: f64,
    pub neg_ratio: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_chain: usize,
    pub temperature: f64,
    pub optimizer: OptimizerKind,
    pub readout: ReadoutKind,
    pub split_embeddings: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr: d.lr,
            weight_decay: d.weight_decay,
            hidden: d.hidden,
            beta: d.beta,
            neg_ratio: d.neg_ratio,
            epochs: d.epochs,
            batch_size: d.batch_size,
            max_chain: d.max_chain,
            temperature: d.temperature,
            optimizer: d.optimizer,
            readout: d.readout,
            split_embeddings: d.split_embeddings,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Sampled never-interacted candidates per user.
    pub n_candidates: usize,
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_candidates: 99,
            ks: vec![5, 10],
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Worker thread cap; 0 or absent uses all cores.
    pub threads: Option<usize>,
    pub data: DataSection,
    pub columns: ColumnSchema,
    pub train: TrainSection,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn vocabulary(&self) -> Result<BehaviorVocab> {
        Ok(BehaviorVocab::from_names(&self.data.vocabulary)?)
    }

    /// Assemble the library-level training config.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            hidden: self.train.hidden,
            beta: self.train.beta,
            neg_ratio: self.train.neg_ratio,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed,
            max_chain: self.train.max_chain,
            temperature: self.train.temperature,
            optimizer: self.train.optimizer,
            readout: self.train.readout,
            split_embeddings: self.train.split_embeddings,
            encoder: self.encoder,
            fusion: self.fusion,
        }
        .normalized()
    }
}
