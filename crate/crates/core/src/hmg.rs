//! Per-user hyper meta-graph construction.
//!
//! A hyper meta-path consolidates all of a user's interactions with one item
//! into a single chronological chain `User -> b_1 -> ... -> b_k -> Item`,
//! with behaviors as typed nodes. The union of a user's paths at behavior
//! level `t` is a hyper meta-graph: a tree rooted at the user whose allowed
//! behavior set grows with `t`, from `{buy}` at level 0 to the full
//! vocabulary at level `l`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::ingest::{BehaviorVocab, Dataset};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("behavior level {level} out of range 0..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("unknown user id {0}")]
    UnknownUser(u32),
}

/// The behavior set `B_t` admitted at level `t`: the `t` weakest behaviors
/// plus the target behavior.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BehaviorLevelSet {
    pub level: usize,
    /// Behavior ranks in `B_t`.
    pub behaviors: BTreeSet<usize>,
}

impl BehaviorLevelSet {
    pub fn allows(&self, rank: usize) -> bool {
        self.behaviors.contains(&rank)
    }
}

/// `B_t = {r_0, ..., r_{t-1}} ∪ {r_l}` for a vocabulary `r_0..r_l`.
///
/// Level 0 is the target behavior alone; each level adds the next-weakest
/// auxiliary behavior, so the sets are strictly nested up to the full
/// vocabulary at `t = l`.
pub fn behavior_level_set(
    vocab: &BehaviorVocab,
    t: usize,
) -> Result<BehaviorLevelSet, GraphError> {
    let l = vocab.max_rank();
    if t > l {
        return Err(GraphError::LevelOutOfRange { level: t, max: l });
    }
    let mut behaviors: BTreeSet<usize> = (0..t).collect();
    behaviors.insert(l);
    Ok(BehaviorLevelSet {
        level: t,
        behaviors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum NodeKind {
    /// The root; payload is the dense user id.
    User(u32),
    /// A behavior occurrence; payload is the behavior rank.
    Behavior(usize),
    /// A leaf; payload is the dense item id.
    Item(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GraphNode {
    pub kind: NodeKind,
    /// Set on behavior nodes; kept so chronology is checkable downstream.
    pub timestamp: Option<u64>,
}

/// One user-item chain after behavior filtering and truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HyperMetaPath {
    pub item: u32,
    /// `(behavior rank, timestamp)` in chronological order.
    pub chain: Vec<(usize, u64)>,
}

/// Rooted tree for one user at one behavior level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HyperMetaGraph {
    pub user: u32,
    pub level: usize,
    pub nodes: Vec<GraphNode>,
    /// Directed parent -> child pairs; index 0 is always the user root.
    pub edges: Vec<(u32, u32)>,
    pub allowed: BehaviorLevelSet,
}

impl HyperMetaGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Dense item ids present in this graph, ascending.
    pub fn items(&self) -> Vec<u32> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Item(i) => Some(i),
                _ => None,
            })
            .collect()
    }

    /// Node/edge list as JSON for inspection, with behavior names resolved.
    pub fn debug_json(&self, vocab: &BehaviorVocab) -> serde_json::Value {
        let nodes: Vec<serde_json::Value> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| match n.kind {
                NodeKind::User(u) => serde_json::json!({"id": id, "kind": "user", "user": u}),
                NodeKind::Behavior(r) => serde_json::json!({
                    "id": id, "kind": "behavior",
                    "behavior": vocab.name_of(r),
                    "timestamp": n.timestamp,
                }),
                NodeKind::Item(i) => serde_json::json!({"id": id, "kind": "item", "item": i}),
            })
            .collect();
        serde_json::json!({
            "user": self.user,
            "level": self.level,
            "allowed": self.allowed.behaviors.iter().map(|&r| vocab.name_of(r)).collect::<Vec<_>>(),
            "nodes": nodes,
            "edges": self.edges,
        })
    }
}

/// Filter one item's records to the allowed behaviors, keep chronological
/// order, and truncate to the most recent `max_chain` events.
///
/// `records` must be the user's `(behavior, timestamp)` pairs for this item
/// in `(timestamp, input order)` order. Returns `None` when nothing survives
/// the behavior filter.
pub fn build_hyper_meta_path(
    item: u32,
    records: &[(usize, u64)],
    allowed: &BehaviorLevelSet,
    max_chain: usize,
) -> Option<HyperMetaPath> {
    assert!(max_chain >= 1, "max_chain must be at least 1");
    let kept: Vec<(usize, u64)> = records
        .iter()
        .copied()
        .filter(|(rank, _)| allowed.allows(*rank))
        .collect();
    if kept.is_empty() {
        return None;
    }
    let start = kept.len().saturating_sub(max_chain);
    Some(HyperMetaPath {
        item,
        chain: kept[start..].to_vec(),
    })
}

/// Build the level-`t` hyper meta-graph for one user.
///
/// The root is the user node; every item with at least one surviving record
/// contributes one chain. Items are visited in ascending dense id so the
/// node/edge lists are deterministic.
pub fn build_hyper_meta_graph(
    dataset: &Dataset,
    user: u32,
    t: usize,
    max_chain: usize,
) -> Result<HyperMetaGraph, GraphError> {
    if user as usize >= dataset.n_users() {
        return Err(GraphError::UnknownUser(user));
    }
    let allowed = behavior_level_set(&dataset.vocab, t)?;

    // Group this user's records per item; the per-item subsequences inherit
    // the dataset's chronological-stable order.
    let mut per_item: BTreeMap<u32, Vec<(usize, u64)>> = BTreeMap::new();
    for r in dataset.user_records(user) {
        per_item
            .entry(r.item)
            .or_default()
            .push((r.behavior, r.timestamp));
    }

    let mut nodes = vec![GraphNode {
        kind: NodeKind::User(user),
        timestamp: None,
    }];
    let mut edges = Vec::new();
    for (&item, records) in &per_item {
        let Some(path) = build_hyper_meta_path(item, records, &allowed, max_chain) else {
            continue;
        };
        let mut parent = 0u32;
        for (rank, ts) in path.chain {
            nodes.push(GraphNode {
                kind: NodeKind::Behavior(rank),
                timestamp: Some(ts),
            });
            let id = (nodes.len() - 1) as u32;
            edges.push((parent, id));
            parent = id;
        }
        nodes.push(GraphNode {
            kind: NodeKind::Item(item),
            timestamp: None,
        });
        edges.push((parent, (nodes.len() - 1) as u32));
    }

    Ok(HyperMetaGraph {
        user,
        level: t,
        nodes,
        edges,
        allowed,
    })
}

/// All `l+1` graphs of one user, level 0 first.
pub fn build_all_levels(
    dataset: &Dataset,
    user: u32,
    max_chain: usize,
) -> Result<Vec<HyperMetaGraph>, GraphError> {
    (0..=dataset.vocab.max_rank())
        .map(|t| build_hyper_meta_graph(dataset, user, t, max_chain))
        .collect()
}

/// Which embedding-table row seeds each node's initial features.
pub type FeatureRef = NodeKind;

/// A graph staged for the encoders: normalized and raw adjacency plus the
/// per-node feature sources.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    /// `D^{-1/2} (A + I) D^{-1/2}` over the undirected tree.
    pub adj_norm: Tensor,
    /// Undirected adjacency without self-loops (GIN aggregates over this).
    pub adj_raw: Tensor,
    pub feats: Vec<FeatureRef>,
}

impl HyperMetaGraph {
    /// Symmetrically normalized adjacency with self-loops, the raw adjacency,
    /// and the feature assignment for every node.
    ///
    /// Message passing treats the tree as undirected, so item information can
    /// reach the root within a few layers.
    pub fn to_encoder_input(&self) -> EncoderInput {
        let n = self.nodes.len();
        let mut adj_raw = Tensor::zeros(n, n);
        for &(a, b) in &self.edges {
            adj_raw.set(a as usize, b as usize, 1.0);
            adj_raw.set(b as usize, a as usize, 1.0);
        }
        let mut with_loops = adj_raw.clone();
        for i in 0..n {
            with_loops.set(i, i, 1.0);
        }
        let degrees: Vec<f64> = (0..n)
            .map(|i| with_loops.row(i).iter().sum::<f64>())
            .collect();
        let mut adj_norm = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = with_loops.get(i, j);
                if v != 0.0 {
                    adj_norm.set(i, j, v / (degrees[i] * degrees[j]).sqrt());
                }
            }
        }
        EncoderInput {
            adj_norm,
            adj_raw,
            feats: self.nodes.iter().map(|node| node.kind).collect(),
        }
    }
}
