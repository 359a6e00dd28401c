//! Model state: every trainable table and parameter set, plus the per-user
//! forward pass from staged graphs to the unified embedding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::contrastive::{build_contrast_embeddings, ContrastTriple, GraphVars};
use crate::encoders::{make_level_encoders, EncoderParams};
use crate::hmg::{EncoderInput, NodeKind};

use super::{fuse, FusionKind, TrainConfig};

/// Parameter handles for the configured fusion strategy.
#[derive(Clone, Debug)]
pub enum FusionParams {
    /// MEAN and SUM carry no parameters.
    Linear,
    Mlp {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
    Pnlf {
        attn_w: ParamId,
        query_table: ParamId,
    },
}

/// Handles into the parameter registry for every model component.
#[derive(Clone, Debug)]
pub struct ModelLayout {
    /// Per-user root features, `n_users x h`.
    pub user_table: ParamId,
    /// Item embeddings, `n_items x h`; doubles as graph node features and
    /// scoring targets unless `split_embeddings` is set.
    pub item_table: ParamId,
    /// Separate scoring-side item table when embeddings are split.
    pub item_score_table: Option<ParamId>,
    /// Per-behavior-type features, `(l+1) x h`.
    pub behavior_table: ParamId,
    /// One encoder per behavior level, level 0 first.
    pub encoders: Vec<EncoderParams>,
    pub fusion: FusionParams,
    /// Bilinear scoring matrix, `h x h`.
    pub score_w: ParamId,
}

impl ModelLayout {
    /// The table item scores are taken from.
    pub fn scoring_table(&self) -> ParamId {
        self.item_score_table.unwrap_or(self.item_table)
    }
}

/// All trainable state plus the config snapshot it was built with.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub params: Params,
    pub layout: ModelLayout,
    pub config: TrainConfig,
    pub n_users: usize,
    pub n_items: usize,
    /// Behavior-level count `l+1`.
    pub n_levels: usize,
}

impl ModelState {
    /// Fresh model with uniform `[-1/sqrt(h), 1/sqrt(h)]` initialization,
    /// seeded from the config.
    pub fn init(n_users: usize, n_items: usize, n_levels: usize, config: &TrainConfig) -> Self {
        let config = config.normalized();
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Params::new();

        let user_table = params.add_uniform("user_table", n_users, h, h, &mut rng);
        let item_table = params.add_uniform("item_table", n_items, h, h, &mut rng);
        let item_score_table = config
            .split_embeddings
            .then(|| params.add_uniform("item_score_table", n_items, h, h, &mut rng));
        let behavior_table = params.add_uniform("behavior_table", n_levels, h, h, &mut rng);
        let encoders = make_level_encoders(&mut params, &config.encoder, n_levels, &mut rng);
        let fusion = match config.fusion.kind {
            FusionKind::Mean | FusionKind::Sum => FusionParams::Linear,
            FusionKind::Mlp => {
                let input = h * n_levels;
                let hidden = config.fusion.mlp_hidden.unwrap_or(h);
                FusionParams::Mlp {
                    w1: params.add_uniform("fusion.w1", input, hidden, input, &mut rng),
                    b1: params.add_uniform("fusion.b1", 1, hidden, input, &mut rng),
                    w2: params.add_uniform("fusion.w2", hidden, h, hidden, &mut rng),
                    b2: params.add_uniform("fusion.b2", 1, h, hidden, &mut rng),
                }
            }
            FusionKind::Pnlf => FusionParams::Pnlf {
                attn_w: params.add_uniform("fusion.attn_w", h, h, h, &mut rng),
                query_table: params.add_uniform("fusion.query_table", n_users, h, h, &mut rng),
            },
        };
        let score_w = params.add_uniform("score.w", h, h, h, &mut rng);

        ModelState {
            params,
            layout: ModelLayout {
                user_table,
                item_table,
                item_score_table,
                behavior_table,
                encoders,
                fusion,
                score_w,
            },
            config,
            n_users,
            n_items,
            n_levels,
        }
    }
}

/// Put one graph's tensors on a tape: adjacency constants plus the feature
/// matrix gathered row-by-row from the user/behavior/item tables.
pub fn stage_graph(tape: &mut Tape, input: &EncoderInput, layout: &ModelLayout) -> GraphVars {
    let adj_norm = tape.constant(input.adj_norm.clone());
    let adj_raw = tape.constant(input.adj_raw.clone());
    let rows: Vec<Var> = input
        .feats
        .iter()
        .map(|f| match f {
            NodeKind::User(u) => tape.gather_row(layout.user_table, *u as usize),
            NodeKind::Behavior(rank) => tape.gather_row(layout.behavior_table, *rank),
            NodeKind::Item(i) => tape.gather_row(layout.item_table, *i as usize),
        })
        .collect();
    let features = tape.concat_rows(&rows);
    GraphVars {
        adj_norm,
        adj_raw,
        features,
    }
}

/// Per-user forward outputs: the level embeddings `h_0..h_l`, the contrast
/// triples, and the fused embedding.
#[derive(Clone, Debug)]
pub struct UserForward {
    pub level_embeds: Vec<Var>,
    pub triples: Vec<ContrastTriple>,
    pub h_uni: Var,
}

/// Encode all of a user's level graphs and fuse the embeddings.
///
/// Values are read from the tape's parameter set; `layout` and `config` only
/// direct the wiring.
pub fn user_forward(
    tape: &mut Tape,
    layout: &ModelLayout,
    config: &TrainConfig,
    graphs: &[EncoderInput],
    user: u32,
) -> UserForward {
    assert_eq!(
        graphs.len(),
        layout.encoders.len(),
        "expected one graph per behavior level"
    );
    let staged: Vec<GraphVars> = graphs
        .iter()
        .map(|g| stage_graph(tape, g, layout))
        .collect();
    let (level_embeds, triples) = build_contrast_embeddings(
        tape,
        &staged,
        &layout.encoders,
        &config.encoder,
        config.readout,
    );
    let h_uni = fuse(
        tape,
        &level_embeds,
        config.fusion.kind,
        &layout.fusion,
        user,
    );
    UserForward {
        level_embeds,
        triples,
        h_uni,
    }
}
