//! Graph encoders turning a hyper meta-graph into node representations and a
//! graph-level embedding.
//!
//! One independently parameterized encoder per behavior level, shared across
//! users. Four kinds:
//!
//! - `SG`  — simplified propagation: `A_hat^L X W`, one weight, no nonlinearity
//! - `GCN` — per layer `relu(A_hat H W_k)`
//! - `GIN` — per layer `MLP_k((1 + eps) H + A H)` with the raw adjacency
//! - `TAG` — per layer `relu(sum_p A_hat^p H W_{k,p})`, hops `p = 0..=K`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Params, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Sg,
    Gcn,
    Gin,
    #[default]
    Tag,
}

impl EncoderKind {
    pub fn all() -> [EncoderKind; 4] {
        [
            EncoderKind::Sg,
            EncoderKind::Gcn,
            EncoderKind::Gin,
            EncoderKind::Tag,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Sg => "sg",
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gin => "gin",
            EncoderKind::Tag => "tag",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden: usize,
    /// TAG adjacency-power count `K` (hops `0..=K` per layer).
    pub tag_hops: usize,
    pub gin_epsilon: f64,
    pub gin_epsilon_learnable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Tag,
            layers: 3,
            hidden: 16,
            tag_hops: 2,
            gin_epsilon: 0.0,
            gin_epsilon_learnable: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GinLayerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// Present when epsilon is trained rather than fixed.
    pub epsilon: Option<ParamId>,
}

/// Parameter handles for one level's encoder.
#[derive(Clone, Debug)]
pub enum EncoderParams {
    Sg { weight: ParamId },
    Gcn { weights: Vec<ParamId> },
    Gin { layers: Vec<GinLayerParams> },
    Tag { hop_weights: Vec<Vec<ParamId>> },
}

/// Register one encoder's parameters under `prefix` (e.g. `enc0`).
pub fn init_encoder_params(
    params: &mut Params,
    cfg: &EncoderConfig,
    prefix: &str,
    rng: &mut impl Rng,
) -> EncoderParams {
    assert!(cfg.layers >= 1, "encoders need at least one layer");
    assert!(cfg.hidden >= 1, "hidden dimension must be positive");
    let h = cfg.hidden;
    match cfg.kind {
        EncoderKind::Sg => EncoderParams::Sg {
            weight: params.add_uniform(format!("{prefix}.w"), h, h, h, rng),
        },
        EncoderKind::Gcn => EncoderParams::Gcn {
            weights: (0..cfg.layers)
                .map(|k| params.add_uniform(format!("{prefix}.l{k}.w"), h, h, h, rng))
                .collect(),
        },
        EncoderKind::Gin => EncoderParams::Gin {
            layers: (0..cfg.layers)
                .map(|k| GinLayerParams {
                    w1: params.add_uniform(format!("{prefix}.l{k}.mlp.w1"), h, h, h, rng),
                    b1: params.add_uniform(format!("{prefix}.l{k}.mlp.b1"), 1, h, h, rng),
                    w2: params.add_uniform(format!("{prefix}.l{k}.mlp.w2"), h, h, h, rng),
                    b2: params.add_uniform(format!("{prefix}.l{k}.mlp.b2"), 1, h, h, rng),
                    epsilon: cfg.gin_epsilon_learnable.then(|| {
                        params.add(
                            format!("{prefix}.l{k}.eps"),
                            crate::autodiff::Tensor::scalar(cfg.gin_epsilon),
                        )
                    }),
                })
                .collect(),
        },
        EncoderKind::Tag => EncoderParams::Tag {
            hop_weights: (0..cfg.layers)
                .map(|k| {
                    (0..=cfg.tag_hops)
                        .map(|p| params.add_uniform(format!("{prefix}.l{k}.hop{p}"), h, h, h, rng))
                        .collect()
                })
                .collect(),
        },
    }
}

/// One independently parameterized encoder per behavior level, identical
/// architecture, shared across users.
pub fn make_level_encoders(
    params: &mut Params,
    cfg: &EncoderConfig,
    levels: usize,
    rng: &mut impl Rng,
) -> Vec<EncoderParams> {
    (0..levels)
        .map(|t| init_encoder_params(params, cfg, &format!("enc{t}"), rng))
        .collect()
}

/// Run one encoder over a staged graph, producing `n x h` node representations.
///
/// `adj_norm` is the symmetrically normalized adjacency (with self-loops),
/// `adj_raw` the self-loop-free adjacency used by GIN, `x` the `n x h` initial
/// node features.
pub fn encode(
    tape: &mut Tape,
    cfg: &EncoderConfig,
    enc: &EncoderParams,
    adj_norm: Var,
    adj_raw: Var,
    x: Var,
) -> Var {
    match enc {
        EncoderParams::Sg { weight } => {
            let mut h = x;
            for _ in 0..cfg.layers {
                h = tape.matmul(adj_norm, h);
            }
            let w = tape.param(*weight);
            tape.matmul(h, w)
        }
        EncoderParams::Gcn { weights } => {
            let mut h = x;
            for w_id in weights {
                let agg = tape.matmul(adj_norm, h);
                let w = tape.param(*w_id);
                let z = tape.matmul(agg, w);
                h = tape.relu(z);
            }
            h
        }
        EncoderParams::Gin { layers } => {
            let mut h = x;
            for layer in layers {
                let agg = tape.matmul(adj_raw, h);
                let scaled = match layer.epsilon {
                    Some(eps_id) => {
                        let eps = tape.param(eps_id);
                        let one_plus = tape.affine(eps, 1.0, 1.0);
                        tape.mul_scalar(h, one_plus)
                    }
                    None => tape.scale(h, 1.0 + cfg.gin_epsilon),
                };
                let z = tape.add(scaled, agg);
                // 2-layer perceptron, relu between
                let w1 = tape.param(layer.w1);
                let b1 = tape.param(layer.b1);
                let w2 = tape.param(layer.w2);
                let b2 = tape.param(layer.b2);
                let z1 = tape.matmul(z, w1);
                let z1 = tape.add_row(z1, b1);
                let a1 = tape.relu(z1);
                let z2 = tape.matmul(a1, w2);
                h = tape.add_row(z2, b2);
            }
            h
        }
        EncoderParams::Tag { hop_weights } => {
            let mut h = x;
            for layer in hop_weights {
                let mut power = h; // A_hat^0 H
                let mut acc: Option<Var> = None;
                for w_id in layer {
                    let w = tape.param(*w_id);
                    let term = tape.matmul(power, w);
                    acc = Some(match acc {
                        Some(a) => tape.add(a, term),
                        None => term,
                    });
                    power = tape.matmul(adj_norm, power);
                }
                h = tape.relu(acc.expect("TAG layer has at least hop 0"));
            }
            h
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    #[default]
    Mean,
    Sum,
}

/// Aggregate node representations into one graph-level embedding.
pub fn readout(tape: &mut Tape, node_repr: Var, kind: ReadoutKind) -> Var {
    assert!(
        tape.value(node_repr).rows() > 0,
        "readout of an empty graph"
    );
    match kind {
        ReadoutKind::Mean => tape.mean_rows(node_repr),
        ReadoutKind::Sum => tape.sum_rows(node_repr),
    }
}
