//! Helpers shared by the integration and acceptance suites.

// each test target uses a different subset of these helpers
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Cursor;

use hmgrec::encoders::{EncoderConfig, EncoderKind};
use hmgrec::hmg::{HyperMetaGraph, NodeKind};
use hmgrec::ingest::{
    filter_dataset, parse_interaction_log, BehaviorVocab, ColumnSchema, Dataset,
    InteractionRecord,
};
use hmgrec::recommender::{FusionConfig, FusionKind, TrainConfig};
use hmgrec::synth::{generate_log, SynthConfig};

pub fn rec(user: &str, item: &str, behavior: usize, ts: u64) -> InteractionRecord {
    InteractionRecord {
        user: user.into(),
        item: item.into(),
        category: None,
        behavior,
        timestamp: ts,
    }
}

/// Chains keyed by raw item name: the canonical graph form.
pub type ChainSet = BTreeMap<String, Vec<(usize, u64)>>;

/// Independent brute-force construction: group (user, item) pairs straight
/// off the raw records, filter by level, stable-sort, truncate.
pub fn oracle_chains(
    records: &[InteractionRecord],
    user: &str,
    level: usize,
    vocab_len: usize,
    max_chain: usize,
) -> ChainSet {
    let target = vocab_len - 1;
    let mut groups: BTreeMap<String, Vec<(usize, u64, usize)>> = BTreeMap::new();
    for (pos, r) in records.iter().enumerate() {
        if r.user == user {
            groups
                .entry(r.item.clone())
                .or_default()
                .push((r.behavior, r.timestamp, pos));
        }
    }
    let mut out = ChainSet::new();
    for (item, mut events) in groups {
        events.retain(|&(b, _, _)| b < level || b == target);
        events.sort_by_key(|&(_, ts, pos)| (ts, pos));
        if events.is_empty() {
            continue;
        }
        let start = events.len().saturating_sub(max_chain);
        out.insert(
            item,
            events[start..].iter().map(|&(b, ts, _)| (b, ts)).collect(),
        );
    }
    out
}

/// Decompose a built graph into per-item chains, verifying tree shape,
/// path typing, chronology, and leaf distinctness along the way.
pub fn graph_chains(graph: &HyperMetaGraph, dataset: &Dataset) -> ChainSet {
    assert_eq!(graph.edges.len(), graph.nodes.len() - 1, "tree edge count");
    assert!(matches!(graph.nodes[0].kind, NodeKind::User(_)));

    let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut parent_count = vec![0usize; graph.nodes.len()];
    for &(a, b) in &graph.edges {
        children.entry(a).or_default().push(b);
        parent_count[b as usize] += 1;
    }
    assert_eq!(parent_count[0], 0, "root must have no parent");
    assert!(
        parent_count[1..].iter().all(|&c| c == 1),
        "every non-root node has exactly one parent"
    );

    let mut out = ChainSet::new();
    for &first in children.get(&0).map(Vec::as_slice).unwrap_or(&[]) {
        let mut chain = Vec::new();
        let mut cursor = first;
        loop {
            match graph.nodes[cursor as usize].kind {
                NodeKind::Behavior(rank) => {
                    let ts = graph.nodes[cursor as usize].timestamp.unwrap();
                    assert!(
                        graph.allowed.allows(rank),
                        "behavior outside the level set leaked into the graph"
                    );
                    chain.push((rank, ts));
                    let next = children.get(&cursor).map(Vec::as_slice).unwrap_or(&[]);
                    assert_eq!(next.len(), 1, "behavior nodes chain linearly");
                    cursor = next[0];
                }
                NodeKind::Item(item) => {
                    assert!(!children.contains_key(&cursor), "items must be leaves");
                    assert!(!chain.is_empty(), "paths are User -> Behavior+ -> Item");
                    assert!(
                        chain.windows(2).all(|w| w[0].1 <= w[1].1),
                        "chain timestamps must be nondecreasing"
                    );
                    let raw = dataset.items[item as usize].clone();
                    assert!(
                        out.insert(raw, chain).is_none(),
                        "item leaves are distinct per graph"
                    );
                    break;
                }
                NodeKind::User(_) => panic!("user node below the root"),
            }
        }
    }
    out
}

/// The planted study dataset: 200 users, 100 items, two archetypes over two
/// catalog halves, filtered at the standard threshold.
pub fn planted_dataset() -> Dataset {
    let vocab = BehaviorVocab::taobao();
    let log = generate_log(&SynthConfig::default());
    let parsed =
        parse_interaction_log(Cursor::new(log), &ColumnSchema::default(), &vocab).unwrap();
    filter_dataset(parsed.records, &vocab, 5, None).unwrap()
}

/// Training configuration for the planted-data studies.
pub fn study_config(beta: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        beta,
        epochs: 30,
        seed,
        hidden: 16,
        encoder: EncoderConfig {
            kind: EncoderKind::Gcn,
            ..EncoderConfig::default()
        },
        fusion: FusionConfig {
            kind: FusionKind::Mean,
            mlp_hidden: None,
        },
        ..TrainConfig::default()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
