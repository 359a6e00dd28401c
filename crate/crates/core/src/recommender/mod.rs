//! Fusion, scoring, losses, negative sampling, and the training loop.
//!
//! The `l+1` behavior-pattern embeddings of a user are fused into one unified
//! embedding, scored against item embeddings through a bilinear form with a
//! logistic link, and trained with a convex combination of the contrastive
//! and recommendation objectives.

mod checkpoint;
mod model;
mod sampling;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, LoadedCheckpoint};
pub use model::{stage_graph, user_forward, FusionParams, ModelLayout, ModelState, UserForward};
pub use sampling::sample_excluding;
pub use train::{
    build_user_loss, gradcheck_dataset, gradcheck_model, sample_negatives, train, EpochLosses,
    TrainError, TrainOutput, UserPlan,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{OptimizerKind, Tape, Var};
use crate::encoders::{EncoderConfig, ReadoutKind};
use crate::hmg::GraphError;
use crate::ingest::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    #[default]
    Mean,
    Sum,
    Mlp,
    Pnlf,
}

impl FusionKind {
    pub fn all() -> [FusionKind; 4] {
        [
            FusionKind::Mean,
            FusionKind::Sum,
            FusionKind::Mlp,
            FusionKind::Pnlf,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            FusionKind::Mean => "mean",
            FusionKind::Sum => "sum",
            FusionKind::Mlp => "mlp",
            FusionKind::Pnlf => "pnlf",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub kind: FusionKind,
    /// Hidden width of the MLP fusion; defaults to the embedding dimension.
    pub mlp_hidden: Option<usize>,
}

/// Everything the trainer needs; also the config snapshot embedded in
/// checkpoints and reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Embedding dimension `h` shared by all tables and encoders.
    pub hidden: usize,
    /// Mixing weight between the recommendation loss (`beta`) and the
    /// contrastive loss (`1 - beta`).
    pub beta: f64,
    /// Sampled negatives per positive pair.
    pub neg_ratio: usize,
    pub epochs: usize,
    /// Users per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Longest behavior chain kept per user-item pair (most recent wins).
    pub max_chain: usize,
    /// InfoNCE similarity temperature.
    pub temperature: f64,
    pub optimizer: OptimizerKind,
    pub readout: ReadoutKind,
    /// Use separate item tables for graph features and scoring.
    pub split_embeddings: bool,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-6,
            hidden: 16,
            beta: 0.5,
            neg_ratio: 4,
            epochs: 50,
            batch_size: 32,
            seed: 42,
            max_chain: 20,
            temperature: 1.0,
            optimizer: OptimizerKind::Adam,
            readout: ReadoutKind::Mean,
            split_embeddings: false,
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Copy with the encoder width forced to `hidden`; [`TrainConfig::hidden`]
    /// is authoritative.
    pub fn normalized(&self) -> TrainConfig {
        let mut cfg = self.clone();
        cfg.encoder.hidden = cfg.hidden;
        cfg
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta must be in [0, 1], got {}", self.beta));
        }
        if self.neg_ratio < 1 {
            return Err("neg_ratio must be at least 1".into());
        }
        if self.hidden < 1 || self.encoder.layers < 1 {
            return Err("hidden dimension and layer count must be positive".into());
        }
        if self.max_chain < 1 {
            return Err("max_chain must be at least 1".into());
        }
        if self.temperature <= 0.0 {
            return Err("temperature must be positive".into());
        }
        if self.batch_size < 1 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("candidate set is empty")]
    NoCandidates,
}

/// Fuse the `l+1` level embeddings into the unified behavior-pattern
/// embedding `h_uni`.
///
/// MEAN/SUM are parameter-free; MLP runs a 2-layer perceptron (tanh hidden)
/// on the concatenation; PNLF attends over levels with a per-user query.
pub fn fuse(
    tape: &mut Tape,
    embeds: &[Var],
    kind: FusionKind,
    fusion: &FusionParams,
    user: u32,
) -> Var {
    assert!(!embeds.is_empty(), "fusion needs at least one embedding");
    let stack = tape.concat_rows(embeds);
    match (kind, fusion) {
        (FusionKind::Mean, _) => tape.mean_rows(stack),
        (FusionKind::Sum, _) => tape.sum_rows(stack),
        (FusionKind::Mlp, FusionParams::Mlp { w1, b1, w2, b2 }) => {
            let levels = embeds.len();
            let width = tape.value(stack).cols();
            let flat = tape.reshape(stack, 1, levels * width);
            let w1 = tape.param(*w1);
            let b1 = tape.param(*b1);
            let w2 = tape.param(*w2);
            let b2 = tape.param(*b2);
            let z1 = tape.matmul(flat, w1);
            let z1 = tape.add(z1, b1);
            let a1 = tape.tanh(z1);
            let z2 = tape.matmul(a1, w2);
            tape.add(z2, b2)
        }
        (FusionKind::Pnlf, FusionParams::Pnlf { attn_w, query_table }) => {
            let w = tape.param(*attn_w);
            let keys = tape.matmul(stack, w);
            let keys = tape.tanh(keys);
            let query = tape.gather_row(*query_table, user as usize);
            let query_col = tape.transpose(query);
            let logits_col = tape.matmul(keys, query_col);
            let logits = tape.transpose(logits_col);
            let alpha = tape.softmax_row(logits);
            tape.matmul(alpha, stack)
        }
        (kind, fusion) => panic!("fusion parameters {fusion:?} do not match strategy {kind:?}"),
    }
}

/// Pre-activation bilinear score `h_uni^T W h_k` for each item.
///
/// The `h_uni W` product is shared across items, so scoring a candidate pool
/// costs one matmul plus a dot per item.
pub fn score_logits(tape: &mut Tape, layout: &ModelLayout, h_uni: Var, items: &[u32]) -> Vec<Var> {
    let w = tape.param(layout.score_w);
    let mapped = tape.matmul(h_uni, w);
    items
        .iter()
        .map(|&item| {
            let emb = tape.gather_row(layout.scoring_table(), item as usize);
            tape.dot(mapped, emb)
        })
        .collect()
}

/// Predicted interaction probability: the bilinear score through a logistic
/// link, so it lands in (0, 1) as the likelihood objective requires.
pub fn score(tape: &mut Tape, layout: &ModelLayout, h_uni: Var, item: u32) -> Var {
    let logit = score_logits(tape, layout, h_uni, &[item])[0];
    tape.sigmoid(logit)
}

/// Binary cross-entropy of one prediction; predictions at exactly 0 or 1 are
/// clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(tape: &mut Tape, p_hat: Var, label: bool) -> Var {
    let p = tape.clamp(p_hat, 1e-12, 1.0 - 1e-12);
    let log_term = if label {
        tape.log(p)
    } else {
        let one_minus = tape.affine(p, -1.0, 1.0);
        tape.log(one_minus)
    };
    tape.scale(log_term, -1.0)
}

/// Mean binary cross-entropy over labelled predictions.
pub fn rec_loss(tape: &mut Tape, predictions: &[(Var, bool)]) -> Var {
    assert!(!predictions.is_empty(), "rec_loss over an empty batch");
    let terms: Vec<Var> = predictions
        .iter()
        .map(|&(p, label)| bce_loss(tape, p, label))
        .collect();
    let total = tape.sum_vars(&terms);
    tape.scale(total, 1.0 / predictions.len() as f64)
}

/// The joint objective `(1 - beta) * contra + beta * rec`.
pub fn total_loss(contra: f64, rec: f64, beta: f64) -> f64 {
    assert!((0.0..=1.0).contains(&beta), "beta must be in [0, 1]");
    (1.0 - beta) * contra + beta * rec
}

/// Rank `candidates` for `user` by predicted score, descending, ties broken
/// by ascending item id; returns the top `k` as `(item, probability)`.
pub fn recommend_topk(
    model: &ModelState,
    dataset: &Dataset,
    user: u32,
    k: usize,
    candidates: &[u32],
) -> Result<Vec<(u32, f64)>, RecommendError> {
    if candidates.is_empty() {
        return Err(RecommendError::NoCandidates);
    }
    if user as usize >= model.n_users {
        return Err(RecommendError::Graph(GraphError::UnknownUser(user)));
    }
    let graphs = crate::hmg::build_all_levels(dataset, user, model.config.max_chain)?
        .iter()
        .map(|g| g.to_encoder_input())
        .collect::<Vec<_>>();
    let mut tape = Tape::new(&model.params);
    let fwd = user_forward(&mut tape, &model.layout, &model.config, &graphs, user);
    let logits = score_logits(&mut tape, &model.layout, fwd.h_uni, candidates);
    let mut scored: Vec<(u32, f64)> = candidates
        .iter()
        .zip(&logits)
        .map(|(&item, &logit)| {
            let p = tape.sigmoid(logit);
            (item, tape.scalar(p))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
