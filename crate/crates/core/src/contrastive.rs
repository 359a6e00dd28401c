//! Hyper meta-graph discrimination: the InfoNCE objective between adjacent
//! behavior levels.
//!
//! For levels `t-1` and `t`, the negative pair is `(h_t, h_{t-1})` and the
//! positive pair is `(h_t, h_hat_t)` where `h_hat_t` re-encodes the level-`t`
//! graph with the previous level's encoder. No graph augmentation anywhere:
//! the cross-encoder trick is the sole positive-pair source.

use crate::autodiff::{Tape, Var};
use crate::encoders::{encode, readout, EncoderConfig, EncoderParams, ReadoutKind};

/// Staged graph tensors on a tape: normalized adjacency, raw adjacency, and
/// the assembled `n x h` feature matrix.
#[derive(Clone, Copy, Debug)]
pub struct GraphVars {
    pub adj_norm: Var,
    pub adj_raw: Var,
    pub features: Var,
}

/// The three embeddings contrasted at one level boundary.
///
/// `h_hat` and `h_prev` come from the same encoder `g_{t-1}`.
#[derive(Clone, Copy, Debug)]
pub struct ContrastTriple {
    /// `g_{t-1}(HG_{t-1})`
    pub h_prev: Var,
    /// `g_t(HG_t)`
    pub h_t: Var,
    /// `g_{t-1}(HG_t)`, the cross-encoded positive
    pub h_hat: Var,
}

/// Dot-product similarity with temperature: `a . b / tau`.
///
/// The objective maximizes this on positive pairs, so it is a similarity,
/// not a distance.
pub fn similarity(tape: &mut Tape, a: Var, b: Var, temperature: f64) -> Var {
    assert!(temperature > 0.0, "temperature must be positive");
    let d = tape.dot(a, b);
    tape.scale(d, 1.0 / temperature)
}

/// Two-term InfoNCE loss from pre-computed similarities:
/// `-ln(exp(d_pos) / (exp(d_pos) + exp(d_neg)))`.
///
/// Computed as `softplus(d_neg - d_pos)`, which is the same value with the
/// max-subtraction overflow guard built in.
pub fn infonce_pair_loss(tape: &mut Tape, d_pos: Var, d_neg: Var) -> Var {
    let gap = tape.sub(d_neg, d_pos);
    tape.softplus(gap)
}

/// Encode all `l+1` graphs of one user and assemble the `l` contrast triples.
///
/// Returns the primary per-level embeddings `h_0..h_l` (used downstream by
/// fusion) and one triple per adjacent level pair.
pub fn build_contrast_embeddings(
    tape: &mut Tape,
    graphs: &[GraphVars],
    encoders: &[EncoderParams],
    cfg: &EncoderConfig,
    readout_kind: ReadoutKind,
) -> (Vec<Var>, Vec<ContrastTriple>) {
    assert_eq!(
        graphs.len(),
        encoders.len(),
        "one encoder per behavior level"
    );
    let embeds: Vec<Var> = graphs
        .iter()
        .zip(encoders)
        .map(|(g, enc)| {
            let h = encode(tape, cfg, enc, g.adj_norm, g.adj_raw, g.features);
            readout(tape, h, readout_kind)
        })
        .collect();
    let triples = (1..graphs.len())
        .map(|t| {
            let g = &graphs[t];
            let cross = encode(tape, cfg, &encoders[t - 1], g.adj_norm, g.adj_raw, g.features);
            ContrastTriple {
                h_prev: embeds[t - 1],
                h_t: embeds[t],
                h_hat: readout(tape, cross, readout_kind),
            }
        })
        .collect();
    (embeds, triples)
}

/// Sum of the pairwise losses over one user's triples (the inner sum of the
/// total contrastive objective; the mean over users is taken by the caller).
pub fn user_contrastive_loss(tape: &mut Tape, triples: &[ContrastTriple], temperature: f64) -> Var {
    let losses: Vec<Var> = triples
        .iter()
        .map(|triple| {
            let d_pos = similarity(tape, triple.h_t, triple.h_hat, temperature);
            let d_neg = similarity(tape, triple.h_t, triple.h_prev, temperature);
            infonce_pair_loss(tape, d_pos, d_neg)
        })
        .collect();
    tape.sum_vars(&losses)
}

/// The total contrastive objective: the mean over users of each user's
/// triple-loss sum. Every user must contribute the same number of triples
/// (one per adjacent level pair).
pub fn contrastive_loss(
    tape: &mut Tape,
    per_user_triples: &[Vec<ContrastTriple>],
    temperature: f64,
) -> Var {
    assert!(
        !per_user_triples.is_empty(),
        "contrastive loss needs at least one user"
    );
    let levels = per_user_triples[0].len();
    assert!(
        per_user_triples.iter().all(|t| t.len() == levels),
        "every user contributes the same number of triples"
    );
    let sums: Vec<Var> = per_user_triples
        .iter()
        .map(|triples| user_contrastive_loss(tape, triples, temperature))
        .collect();
    let total = tape.sum_vars(&sums);
    tape.scale(total, 1.0 / per_user_triples.len() as f64)
}
