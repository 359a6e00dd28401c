//! Leave-one-out evaluation: Recall@K, NDCG@K, and report generation.
//!
//! Per user, the chronologically last *buy* is held out and every record of
//! that (user, item) pair is removed from the training split, so no test pair
//! can appear in any training graph at any level. The held-out item is ranked
//! against sampled never-interacted candidates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::hmg::{build_all_levels, GraphError};
use crate::ingest::Dataset;
use crate::recommender::{
    sample_excluding, score_logits, user_forward, ModelState, TrainConfig,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user {0} has fewer than 2 target-behavior records")]
    TooFewBuys(u32),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint was trained on {expected} users / {expected_items} items, dataset has {found} / {found_items}")]
    DimensionMismatch {
        expected: usize,
        expected_items: usize,
        found: usize,
        found_items: usize,
    },
}

/// One user's test case: the held-out item and its candidate pool.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HoldoutEntry {
    pub user: u32,
    pub item: u32,
    /// Never-interacted items the held-out item is ranked against.
    pub candidates: Vec<u32>,
}

/// Training split plus per-user holdouts.
pub struct EvalSplit {
    pub train: Dataset,
    pub holdout: Vec<HoldoutEntry>,
}

fn candidate_rng(seed: u64, user: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(user as u64).to_le_bytes());
    key[16..24].copy_from_slice(&0x6576616cu64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Hold out each user's last buy (by timestamp, ties resolved to the latest
/// input position) and sample `n_candidates` never-interacted items per user.
///
/// The train split is independent of `seed`; only candidate sampling uses it.
pub fn leave_one_out_split(
    dataset: &Dataset,
    n_candidates: usize,
    seed: u64,
) -> Result<EvalSplit, EvalError> {
    let target = dataset.vocab.max_rank();
    let mut held: Vec<(u32, u32)> = Vec::with_capacity(dataset.n_users());
    for user in 0..dataset.n_users() as u32 {
        let records = dataset.user_records(user);
        let buys: Vec<&crate::ingest::IndexedRecord> =
            records.iter().filter(|r| r.behavior == target).collect();
        if buys.len() < 2 {
            return Err(EvalError::TooFewBuys(user));
        }
        // records are (timestamp, input order) sorted, so the last buy wins
        held.push((user, buys.last().unwrap().item));
    }

    let train_records: Vec<crate::ingest::IndexedRecord> = dataset
        .records
        .iter()
        .filter(|r| held[r.user as usize].1 != r.item)
        .cloned()
        .collect();
    let train = dataset.with_records(train_records);

    let holdout = held
        .into_iter()
        .map(|(user, item)| {
            let interacted = dataset.interacted_items(user);
            let mut rng = candidate_rng(seed, user);
            let candidates =
                sample_excluding(&interacted, dataset.n_items(), n_candidates, &mut rng);
            HoldoutEntry {
                user,
                item,
                candidates,
            }
        })
        .collect();

    Ok(EvalSplit { train, holdout })
}

/// Recall@K with a single relevant item: 1 iff it ranked within the top K.
pub fn recall_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// NDCG@K with a single relevant item: `1 / log2(rank + 1)` within the top
/// K, else 0.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1, "ranks are 1-based");
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Rank of the held-out item within its pool under "higher score first, ties
/// to the lower item id".
fn rank_of_held(held_item: u32, held_score: f64, candidates: &[(u32, f64)]) -> usize {
    1 + candidates
        .iter()
        .filter(|(item, score)| {
            *score > held_score || (*score == held_score && *item < held_item)
        })
        .count()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Per-user outcome row; report means are averages of these.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserEvalRow {
    pub user: u32,
    /// 1-based rank of the held-out item in its pool.
    pub rank: usize,
    pub pool_size: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<KMetrics>,
    pub n_users: usize,
    pub per_user: Vec<UserEvalRow>,
    pub config: TrainConfig,
    /// Not serialized: keeps report files byte-identical across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl EvalReport {
    /// Aligned text table, one row per K.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .metrics
            .iter()
            .flat_map(|m| [format!("Recall@{}", m.k), format!("NDCG@{}", m.k)])
            .collect();
        let values: Vec<String> = self
            .metrics
            .iter()
            .flat_map(|m| [format!("{:.4}", m.recall), format!("{:.4}", m.ndcg)])
            .collect();
        let widths: Vec<usize> = header
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        out.push_str(&format!("users: {}\n", self.n_users));
        for (h, w) in header.iter().zip(&widths) {
            out.push_str(&format!("{h:>w$}  ", w = w));
        }
        out.push('\n');
        for (v, w) in values.iter().zip(&widths) {
            out.push_str(&format!("{v:>w$}  ", w = w));
        }
        out.push('\n');
        if self.wall_time_secs > 0.0 {
            out.push_str(&format!("wall time: {:.2}s\n", self.wall_time_secs));
        }
        out
    }
}

/// Evaluate with an arbitrary pool scorer: `scorer(user, pool)` returns one
/// score per pool entry, held-out item first.
pub fn evaluate_with_scorer<F>(
    split: &EvalSplit,
    ks: &[usize],
    config: &TrainConfig,
    scorer: F,
) -> EvalReport
where
    F: Fn(u32, &[u32]) -> Vec<f64> + Sync,
{
    let started = std::time::Instant::now();
    let per_user: Vec<UserEvalRow> = split
        .holdout
        .par_iter()
        .map(|entry| {
            let mut pool = Vec::with_capacity(1 + entry.candidates.len());
            pool.push(entry.item);
            pool.extend_from_slice(&entry.candidates);
            let scores = scorer(entry.user, &pool);
            assert_eq!(scores.len(), pool.len(), "scorer must score the whole pool");
            let held_score = scores[0];
            let scored: Vec<(u32, f64)> = entry
                .candidates
                .iter()
                .copied()
                .zip(scores[1..].iter().copied())
                .collect();
            UserEvalRow {
                user: entry.user,
                rank: rank_of_held(entry.item, held_score, &scored),
                pool_size: pool.len(),
            }
        })
        .collect();

    let n = per_user.len().max(1) as f64;
    let metrics = ks
        .iter()
        .map(|&k| KMetrics {
            k,
            recall: per_user.iter().map(|r| recall_at_k(r.rank, k)).sum::<f64>() / n,
            ndcg: per_user.iter().map(|r| ndcg_at_k(r.rank, k)).sum::<f64>() / n,
        })
        .collect();
    EvalReport {
        metrics,
        n_users: per_user.len(),
        per_user,
        config: config.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    }
}

/// Score every holdout pool with the trained model and aggregate metrics.
///
/// User embeddings are built from the split's train records only.
pub fn evaluate(
    model: &ModelState,
    split: &EvalSplit,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if model.n_users != split.train.n_users() || model.n_items != split.train.n_items() {
        return Err(EvalError::DimensionMismatch {
            expected: model.n_users,
            expected_items: model.n_items,
            found: split.train.n_users(),
            found_items: split.train.n_items(),
        });
    }
    // Graph construction can fail only for unknown users; the split keeps
    // user ids intact, so check once up front by building user 0.
    if split.train.n_users() > 0 {
        build_all_levels(&split.train, 0, model.config.max_chain)?;
    }
    Ok(evaluate_with_scorer(split, ks, &model.config, |user, pool| {
        let graphs: Vec<_> = build_all_levels(&split.train, user, model.config.max_chain)
            .expect("split keeps every user")
            .iter()
            .map(|g| g.to_encoder_input())
            .collect();
        let mut tape = Tape::new(&model.params);
        let fwd = user_forward(&mut tape, &model.layout, &model.config, &graphs, user);
        score_logits(&mut tape, &model.layout, fwd.h_uni, pool)
            .into_iter()
            .map(|v| tape.scalar(v))
            .collect()
    }))
}
