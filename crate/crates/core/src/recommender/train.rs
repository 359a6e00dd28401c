//! The joint training loop and its gradient check.
//!
//! Each epoch shuffles users into mini-batches. Per user: encode the cached
//! level graphs, assemble the contrastive triples, fuse, score the user's
//! held-in buys plus sampled negatives, and backpropagate the per-user share
//! of the batch objective. Forward/backward runs in parallel across the
//! batch; gradients are merged in user order and applied by a single
//! optimizer step, so results do not depend on thread scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::{
    compare_gradients, Gradients, OptimConfig, Optimizer, Params, Tape, Var,
};
use crate::contrastive::user_contrastive_loss;
use crate::hmg::{build_all_levels, EncoderInput, GraphError};
use crate::ingest::Dataset;

use super::model::{user_forward, ModelLayout, ModelState};
use super::sampling::sample_excluding;
use super::{bce_loss, score_logits, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("user {user} has no eligible negative items")]
    NoEligibleNegatives { user: u32 },
    #[error("training diverged at epoch {epoch}: non-finite loss or gradient")]
    Diverged { epoch: usize },
}

/// The scored pairs for one user in one epoch.
#[derive(Clone, Debug)]
pub struct UserPlan {
    pub user: u32,
    /// Distinct items the user bought in the training data.
    pub positives: Vec<u32>,
    /// Sampled never-bought items, `neg_ratio` per positive.
    pub negatives: Vec<u32>,
}

impl UserPlan {
    pub fn pairs(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

/// Uniform negatives without replacement from the items the user has never
/// bought.
pub fn sample_negatives(
    user: u32,
    bought_sorted: &[u32],
    n_items: usize,
    k: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<u32>, TrainError> {
    assert!(k >= 1, "negative sample count must be at least 1");
    if bought_sorted.len() >= n_items {
        return Err(TrainError::NoEligibleNegatives { user });
    }
    Ok(sample_excluding(bought_sorted, n_items, k, rng))
}

/// Derive an independent stream per (seed, epoch, user) so parallel batch
/// execution cannot perturb sampling.
fn plan_rng(seed: u64, epoch: usize, user: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(user as u64).to_le_bytes());
    key[24..32].copy_from_slice(&0x706c616eu64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn make_user_plan(
    user: u32,
    bought: &[u32],
    n_items: usize,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<UserPlan, TrainError> {
    let mut rng = plan_rng(cfg.seed, epoch, user);
    let negatives = if bought.is_empty() {
        Vec::new()
    } else {
        sample_negatives(user, bought, n_items, cfg.neg_ratio * bought.len(), &mut rng)?
    };
    Ok(UserPlan {
        user,
        positives: bought.to_vec(),
        negatives,
    })
}

/// One user's share of the batch objective, still on its tape.
pub struct UserLoss<'p> {
    pub tape: Tape<'p>,
    /// `(1-beta)/B * contra + beta/P * rec_sum`
    pub total: Var,
    pub contra: Var,
    pub rec_sum: Option<Var>,
}

/// Build one user's weighted loss on a fresh tape.
///
/// `batch_users` is the user count `B` the contrastive mean runs over and
/// `total_pairs` the pair count `P` normalizing the recommendation loss, so
/// summing `total` over the batch reproduces the joint objective exactly.
pub fn build_user_loss<'p>(
    params: &'p Params,
    layout: &ModelLayout,
    cfg: &TrainConfig,
    graphs: &[EncoderInput],
    plan: &UserPlan,
    batch_users: usize,
    total_pairs: usize,
) -> UserLoss<'p> {
    let mut tape = Tape::new(params);
    let fwd = user_forward(&mut tape, layout, cfg, graphs, plan.user);
    let contra = user_contrastive_loss(&mut tape, &fwd.triples, cfg.temperature);

    let rec_sum = if plan.pairs() > 0 {
        let mut terms = Vec::with_capacity(plan.pairs());
        let pos_logits = score_logits(&mut tape, layout, fwd.h_uni, &plan.positives);
        for logit in pos_logits {
            let p = tape.sigmoid(logit);
            terms.push(bce_loss(&mut tape, p, true));
        }
        let neg_logits = score_logits(&mut tape, layout, fwd.h_uni, &plan.negatives);
        for logit in neg_logits {
            let p = tape.sigmoid(logit);
            terms.push(bce_loss(&mut tape, p, false));
        }
        Some(tape.sum_vars(&terms))
    } else {
        None
    };

    let mut total = tape.scale(contra, (1.0 - cfg.beta) / batch_users as f64);
    if let (Some(rec), true) = (rec_sum, total_pairs > 0) {
        let weighted = tape.scale(rec, cfg.beta / total_pairs as f64);
        total = tape.add(total, weighted);
    }
    UserLoss {
        tape,
        total,
        contra,
        rec_sum,
    }
}

/// Contrastive and recommendation loss means for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: usize,
    /// Mean over users of the per-user triple-loss sum.
    pub contra: f64,
    /// Mean binary cross-entropy over all scored pairs.
    pub rec: f64,
}

pub struct TrainOutput {
    pub model: ModelState,
    pub optimizer: Optimizer,
    pub history: Vec<EpochLosses>,
}

pub(crate) fn optim_config_for(cfg: &TrainConfig) -> OptimConfig {
    OptimConfig {
        kind: cfg.optimizer,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    }
}

/// Train a fresh model on `dataset`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    let cfg = cfg.normalized();
    cfg.validate().map_err(TrainError::InvalidConfig)?;
    let n_users = dataset.n_users();
    let n_items = dataset.n_items();
    let mut model = ModelState::init(n_users, n_items, dataset.vocab.len(), &cfg);
    let mut optimizer = Optimizer::new(optim_config_for(&cfg), &model.params);

    // Graphs are a pure function of the dataset; build once, reuse per epoch.
    let graphs: Vec<Vec<EncoderInput>> = (0..n_users as u32)
        .into_par_iter()
        .map(|user| {
            build_all_levels(dataset, user, cfg.max_chain)
                .map(|gs| gs.iter().map(|g| g.to_encoder_input()).collect())
        })
        .collect::<Result<_, _>>()?;
    let bought: Vec<Vec<u32>> = (0..n_users as u32)
        .map(|u| dataset.bought_items(u))
        .collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<u32> = (0..n_users as u32).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15));
        order.shuffle(&mut shuffle_rng);

        let mut contra_sum = 0.0;
        let mut rec_sum = 0.0;
        let mut pairs_total = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let plans: Vec<UserPlan> = batch
                .iter()
                .map(|&u| make_user_plan(u, &bought[u as usize], n_items, &cfg, epoch))
                .collect::<Result<_, _>>()?;
            let batch_pairs: usize = plans.iter().map(UserPlan::pairs).sum();

            let results: Vec<(Gradients, f64, f64)> = plans
                .par_iter()
                .map(|plan| {
                    let loss = build_user_loss(
                        &model.params,
                        &model.layout,
                        &cfg,
                        &graphs[plan.user as usize],
                        plan,
                        batch.len(),
                        batch_pairs,
                    );
                    let grads = loss.tape.backward(loss.total);
                    let contra = loss.tape.scalar(loss.contra);
                    let rec = loss.rec_sum.map(|v| loss.tape.scalar(v)).unwrap_or(0.0);
                    (grads, contra, rec)
                })
                .collect();

            let mut grads = Gradients::zeros(model.params.len());
            let mut batch_contra = 0.0;
            let mut batch_rec = 0.0;
            for (g, contra, rec) in &results {
                grads.merge(g);
                batch_contra += contra;
                batch_rec += rec;
            }
            if !(batch_contra.is_finite() && batch_rec.is_finite() && grads.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            optimizer.step(&mut model.params, &grads);
            contra_sum += batch_contra;
            rec_sum += batch_rec;
            pairs_total += batch_pairs;
        }
        history.push(EpochLosses {
            epoch,
            contra: contra_sum / n_users as f64,
            rec: if pairs_total > 0 {
                rec_sum / pairs_total as f64
            } else {
                0.0
            },
        });
    }

    Ok(TrainOutput {
        model,
        optimizer,
        history,
    })
}

/// The canonical 2-user / 3-item instance the gradient check runs on: mixed
/// behaviors so every level graph is non-trivial.
pub fn gradcheck_dataset() -> Dataset {
    let rec = |user: &str, item: &str, behavior: usize, ts: u64| crate::ingest::InteractionRecord {
        user: user.into(),
        item: item.into(),
        category: None,
        behavior,
        timestamp: ts,
    };
    let records = vec![
        rec("u0", "a", 0, 1),
        rec("u0", "a", 3, 2),
        rec("u0", "b", 3, 3),
        rec("u1", "b", 0, 1),
        rec("u1", "b", 1, 2),
        rec("u1", "b", 2, 3),
        rec("u1", "b", 3, 4),
        rec("u1", "c", 3, 5),
    ];
    crate::ingest::index_records(records, &crate::ingest::BehaviorVocab::taobao())
        .expect("fixed records are non-empty")
}

/// Check the backward pass of the full joint objective against central
/// differences on a small instance, one report entry per parameter tensor.
///
/// Deterministic: the pair plan is fixed (epoch 0) before checking.
pub fn gradcheck_model(
    dataset: &Dataset,
    cfg: &TrainConfig,
    eps: f64,
    tol: f64,
) -> Result<crate::autodiff::GradcheckReport, TrainError> {
    let cfg = cfg.normalized();
    cfg.validate().map_err(TrainError::InvalidConfig)?;
    let n_users = dataset.n_users();
    let n_items = dataset.n_items();
    let mut model = ModelState::init(n_users, n_items, dataset.vocab.len(), &cfg);

    let graphs: Vec<Vec<EncoderInput>> = (0..n_users as u32)
        .map(|user| {
            build_all_levels(dataset, user, cfg.max_chain)
                .map(|gs| gs.iter().map(|g| g.to_encoder_input()).collect())
        })
        .collect::<Result<_, _>>()?;
    let plans: Vec<UserPlan> = (0..n_users as u32)
        .map(|u| make_user_plan(u, &dataset.bought_items(u), n_items, &cfg, 0))
        .collect::<Result<_, _>>()?;
    let total_pairs: usize = plans.iter().map(UserPlan::pairs).sum();

    // Analytic pass: sum per-user gradients of the batch objective.
    let mut analytic = Gradients::zeros(model.params.len());
    for plan in &plans {
        let loss = build_user_loss(
            &model.params,
            &model.layout,
            &cfg,
            &graphs[plan.user as usize],
            plan,
            n_users,
            total_pairs,
        );
        analytic.merge(&loss.tape.backward(loss.total));
    }

    let layout = model.layout.clone();
    let mut f = |params: &Params| -> f64 {
        plans
            .iter()
            .map(|plan| {
                let loss = build_user_loss(
                    params,
                    &layout,
                    &cfg,
                    &graphs[plan.user as usize],
                    plan,
                    n_users,
                    total_pairs,
                );
                loss.tape.scalar(loss.total)
            })
            .sum()
    };
    Ok(compare_gradients(&mut f, &mut model.params, &analytic, eps, tol))
}
