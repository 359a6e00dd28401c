//! Interaction-log parsing, quality filtering, and entity indexing.
//!
//! Raw logs are CSV lines in the e-commerce "UserBehavior" layout
//! (`user,item,category,behavior,timestamp`, column order configurable).
//! Filtering discards users and items with too few target-behavior (*buy*)
//! records, iterating to a fixpoint because removing an item can invalidate a
//! user and vice versa.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read interaction log: {0}")]
    Io(#[from] std::io::Error),
    #[error("behavior vocabulary is invalid: {0}")]
    InvalidVocabulary(String),
    #[error("dataset is empty after filtering")]
    EmptyAfterFiltering,
    #[error("invalid dataset file: {0}")]
    InvalidDatasetFile(String),
    #[error("failed to decode dataset file: {0}")]
    Decode(#[from] serde_json::Error),
}

/// One behavior kind, ordered by semantic distance to the target behavior:
/// rank 0 is farthest from *buy*, the maximum rank is *buy* itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorType {
    pub name: String,
    pub rank: usize,
}

/// Ordered behavior vocabulary; the last entry is the target behavior.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BehaviorType>", into = "Vec<BehaviorType>")]
pub struct BehaviorVocab {
    types: Vec<BehaviorType>,
}

impl BehaviorVocab {
    /// Build from names ordered weakest-first (target behavior last).
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, IngestError> {
        if names.is_empty() {
            return Err(IngestError::InvalidVocabulary(
                "vocabulary must not be empty".into(),
            ));
        }
        let mut seen = HashMap::new();
        let types = names
            .iter()
            .enumerate()
            .map(|(rank, name)| {
                let name = name.as_ref().to_string();
                if seen.insert(name.clone(), rank).is_some() {
                    return Err(IngestError::InvalidVocabulary(format!(
                        "duplicate behavior name: {name}"
                    )));
                }
                Ok(BehaviorType { name, rank })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BehaviorVocab { types })
    }

    /// The default `pv < fav < cart < buy` ordering.
    pub fn taobao() -> Self {
        BehaviorVocab::from_names(&["pv", "fav", "cart", "buy"]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Highest rank, i.e. `l` for a vocabulary `r_0..r_l`.
    pub fn max_rank(&self) -> usize {
        self.types.len() - 1
    }

    /// The target behavior (*buy*): the one with maximum rank.
    pub fn target(&self) -> &BehaviorType {
        self.types.last().unwrap()
    }

    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|b| b.name == name)
    }

    pub fn name_of(&self, rank: usize) -> &str {
        &self.types[rank].name
    }

    pub fn types(&self) -> &[BehaviorType] {
        &self.types
    }
}

impl TryFrom<Vec<BehaviorType>> for BehaviorVocab {
    type Error = String;

    fn try_from(types: Vec<BehaviorType>) -> Result<Self, Self::Error> {
        for (i, b) in types.iter().enumerate() {
            if b.rank != i {
                return Err(format!("behavior ranks must be contiguous from 0, got {b:?}"));
            }
        }
        if types.is_empty() {
            return Err("vocabulary must not be empty".into());
        }
        Ok(BehaviorVocab { types })
    }
}

impl From<BehaviorVocab> for Vec<BehaviorType> {
    fn from(v: BehaviorVocab) -> Self {
        v.types
    }
}

/// One parsed interaction: raw keys, behavior as a vocabulary rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub category: Option<String>,
    /// Rank into the behavior vocabulary.
    pub behavior: usize,
    /// Seconds since the epoch.
    pub timestamp: u64,
}

/// Which CSV column holds which field.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnSchema {
    pub user: usize,
    pub item: usize,
    pub category: Option<usize>,
    pub behavior: usize,
    pub timestamp: usize,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        // UserBehavior layout: user,item,category,behavior,timestamp
        ColumnSchema {
            user: 0,
            item: 1,
            category: Some(2),
            behavior: 3,
            timestamp: 4,
        }
    }
}

/// Parse result: well-formed records in input order plus reject counters.
#[derive(Clone, Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<InteractionRecord>,
    /// Lines with missing/unparseable fields (including negative timestamps).
    pub rejected_malformed: usize,
    /// Lines whose behavior token is not in the vocabulary.
    pub rejected_unknown_behavior: usize,
}

impl ParseOutcome {
    pub fn rejected_total(&self) -> usize {
        self.rejected_malformed + self.rejected_unknown_behavior
    }
}

/// Parse a comma-separated interaction log.
///
/// One record per well-formed line, input order preserved; malformed lines
/// and unknown behavior tokens are counted, not fatal. Blank lines are
/// skipped silently.
pub fn parse_interaction_log(
    source: impl BufRead,
    schema: &ColumnSchema,
    vocab: &BehaviorVocab,
) -> Result<ParseOutcome, IngestError> {
    let mut out = ParseOutcome::default();
    let needed = schema
        .user
        .max(schema.item)
        .max(schema.behavior)
        .max(schema.timestamp)
        .max(schema.category.unwrap_or(0))
        + 1;
    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < needed {
            out.rejected_malformed += 1;
            continue;
        }
        let Ok(timestamp) = fields[schema.timestamp].parse::<u64>() else {
            out.rejected_malformed += 1;
            continue;
        };
        let user = fields[schema.user];
        let item = fields[schema.item];
        if user.is_empty() || item.is_empty() {
            out.rejected_malformed += 1;
            continue;
        }
        let Some(behavior) = vocab.rank_of(fields[schema.behavior]) else {
            out.rejected_unknown_behavior += 1;
            continue;
        };
        out.records.push(InteractionRecord {
            user: user.to_string(),
            item: item.to_string(),
            category: schema
                .category
                .map(|c| fields[c].to_string())
                .filter(|c| !c.is_empty()),
            behavior,
            timestamp,
        });
    }
    Ok(out)
}

/// An interaction after entity indexing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedRecord {
    pub user: u32,
    pub item: u32,
    pub behavior: usize,
    pub timestamp: u64,
    pub category: Option<String>,
}

/// Filtered, indexed interaction data.
///
/// Records are sorted by `(user, timestamp, input order)`; the id tables map
/// dense ids back to raw keys.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<IndexedRecord>,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub vocab: BehaviorVocab,
    user_index: HashMap<String, u32>,
    item_index: HashMap<String, u32>,
    /// Half-open record ranges per user id (records are user-sorted).
    user_spans: Vec<(usize, usize)>,
}

impl Dataset {
    fn assemble(
        records: Vec<IndexedRecord>,
        users: Vec<String>,
        items: Vec<String>,
        vocab: BehaviorVocab,
    ) -> Self {
        let user_index = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect();
        let item_index = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.clone(), i as u32))
            .collect();
        let mut user_spans = vec![(0usize, 0usize); users.len()];
        let mut start = 0;
        while start < records.len() {
            let u = records[start].user;
            let mut end = start;
            while end < records.len() && records[end].user == u {
                end += 1;
            }
            user_spans[u as usize] = (start, end);
            start = end;
        }
        Dataset {
            records,
            users,
            items,
            vocab,
            user_index,
            item_index,
            user_spans,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_id(&self, raw: &str) -> Option<u32> {
        self.user_index.get(raw).copied()
    }

    pub fn item_id(&self, raw: &str) -> Option<u32> {
        self.item_index.get(raw).copied()
    }

    /// All records of one user, in `(timestamp, input order)` order.
    pub fn user_records(&self, user: u32) -> &[IndexedRecord] {
        let (start, end) = self.user_spans[user as usize];
        &self.records[start..end]
    }

    /// Distinct items the user interacted with via the target behavior, ascending.
    pub fn bought_items(&self, user: u32) -> Vec<u32> {
        let target = self.vocab.max_rank();
        let mut items: Vec<u32> = self
            .user_records(user)
            .iter()
            .filter(|r| r.behavior == target)
            .map(|r| r.item)
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// Distinct items the user interacted with via any behavior, ascending.
    pub fn interacted_items(&self, user: u32) -> Vec<u32> {
        let mut items: Vec<u32> = self.user_records(user).iter().map(|r| r.item).collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    /// Same entities and vocabulary, different record set (keeps ids stable).
    pub fn with_records(&self, mut records: Vec<IndexedRecord>) -> Dataset {
        records.sort_by_key(|r| r.user); // stable: keeps (ts, input) order within users
        Dataset::assemble(
            records,
            self.users.clone(),
            self.items.clone(),
            self.vocab.clone(),
        )
    }

    /// Content hash over records and id tables; used to tie artifacts to the
    /// dataset they were built from.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for u in &self.users {
            hasher.update(u.as_bytes());
            hasher.update([0]);
        }
        for i in &self.items {
            hasher.update(i.as_bytes());
            hasher.update([0]);
        }
        for b in self.vocab.types() {
            hasher.update(b.name.as_bytes());
            hasher.update([0]);
        }
        for r in &self.records {
            hasher.update(r.user.to_le_bytes());
            hasher.update(r.item.to_le_bytes());
            hasher.update((r.behavior as u32).to_le_bytes());
            hasher.update(r.timestamp.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Keep only users and items with at least `min_target_interactions` target
/// (*buy*) records, and drop users exceeding `max_pv_per_user` rank-0 records
/// when set. Iterates to a fixpoint, then indexes entities.
pub fn filter_dataset(
    records: Vec<InteractionRecord>,
    vocab: &BehaviorVocab,
    min_target_interactions: usize,
    max_pv_per_user: Option<usize>,
) -> Result<Dataset, IngestError> {
    assert!(min_target_interactions >= 1);
    let target = vocab.max_rank();
    let mut alive: Vec<bool> = vec![true; records.len()];

    loop {
        let mut user_buys: HashMap<&str, usize> = HashMap::new();
        let mut item_buys: HashMap<&str, usize> = HashMap::new();
        let mut user_pv: HashMap<&str, usize> = HashMap::new();
        for (r, a) in records.iter().zip(&alive) {
            if !a {
                continue;
            }
            if r.behavior == target {
                *user_buys.entry(&r.user).or_default() += 1;
                *item_buys.entry(&r.item).or_default() += 1;
            } else if r.behavior == 0 {
                *user_pv.entry(&r.user).or_default() += 1;
            }
        }
        let user_ok = |u: &str| {
            user_buys.get(u).copied().unwrap_or(0) >= min_target_interactions
                && max_pv_per_user
                    .map(|cap| user_pv.get(u).copied().unwrap_or(0) <= cap)
                    .unwrap_or(true)
        };
        let item_ok = |i: &str| item_buys.get(i).copied().unwrap_or(0) >= min_target_interactions;

        let mut changed = false;
        for (r, a) in records.iter().zip(alive.iter_mut()) {
            if *a && (!user_ok(&r.user) || !item_ok(&r.item)) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let surviving: Vec<InteractionRecord> = records
        .into_iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(r, _)| r)
        .collect();
    index_records(surviving, vocab)
}

/// Index raw records into dense ids without any quality filtering.
///
/// Dense ids are assigned by first appearance in input order; records are
/// then stably sorted by `(user, timestamp)`, so timestamp ties keep input
/// order.
pub fn index_records(
    records: Vec<InteractionRecord>,
    vocab: &BehaviorVocab,
) -> Result<Dataset, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyAfterFiltering);
    }
    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut indexed: Vec<IndexedRecord> = Vec::with_capacity(records.len());
    for r in records {
        let user = *user_index.entry(r.user.clone()).or_insert_with(|| {
            users.push(r.user.clone());
            (users.len() - 1) as u32
        });
        let item = *item_index.entry(r.item.clone()).or_insert_with(|| {
            items.push(r.item.clone());
            (items.len() - 1) as u32
        });
        indexed.push(IndexedRecord {
            user,
            item,
            behavior: r.behavior,
            timestamp: r.timestamp,
            category: r.category,
        });
    }
    indexed.sort_by_key(|r| (r.user, r.timestamp));
    Ok(Dataset::assemble(indexed, users, items, vocab.clone()))
}

/// Per-behavior counts in vocabulary order, mirroring the usual dataset
/// statistics table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub name: String,
    pub count: usize,
    /// Share of all records, in percent.
    pub percentage: f64,
    /// Mean records of this behavior per user.
    pub ave: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub behaviors: Vec<BehaviorStats>,
    pub total: usize,
    pub ave_total: f64,
}

pub fn compute_statistics(dataset: &Dataset) -> DatasetStats {
    let mut counts = vec![0usize; dataset.vocab.len()];
    for r in &dataset.records {
        counts[r.behavior] += 1;
    }
    let total = dataset.records.len();
    let n_users = dataset.n_users();
    let behaviors = dataset
        .vocab
        .types()
        .iter()
        .map(|b| BehaviorStats {
            name: b.name.clone(),
            count: counts[b.rank],
            percentage: if total == 0 {
                0.0
            } else {
                100.0 * counts[b.rank] as f64 / total as f64
            },
            ave: counts[b.rank] as f64 / n_users as f64,
        })
        .collect();
    DatasetStats {
        users: n_users,
        items: dataset.n_items(),
        behaviors,
        total,
        ave_total: total as f64 / n_users as f64,
    }
}

// ---- dataset file format ----

const DATASET_MAGIC: &str = "hmgrec-dataset";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    magic: String,
    version: u32,
    users: Vec<String>,
    items: Vec<String>,
    vocab: BehaviorVocab,
    /// `[user, item, behavior, timestamp, category]` per record.
    records: Vec<(u32, u32, usize, u64, Option<String>)>,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            magic: DATASET_MAGIC.to_string(),
            version: DATASET_VERSION,
            users: self.users.clone(),
            items: self.items.clone(),
            vocab: self.vocab.clone(),
            records: self
                .records
                .iter()
                .map(|r| (r.user, r.item, r.behavior, r.timestamp, r.category.clone()))
                .collect(),
        };
        serde_json::to_string(&file).expect("dataset serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.magic != DATASET_MAGIC {
            return Err(IngestError::InvalidDatasetFile(format!(
                "bad magic {:?}",
                file.magic
            )));
        }
        if file.version != DATASET_VERSION {
            return Err(IngestError::InvalidDatasetFile(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let records = file
            .records
            .into_iter()
            .map(|(user, item, behavior, timestamp, category)| {
                if user as usize >= file.users.len() || item as usize >= file.items.len() {
                    return Err(IngestError::InvalidDatasetFile(
                        "record id out of range".into(),
                    ));
                }
                if behavior >= file.vocab.len() {
                    return Err(IngestError::InvalidDatasetFile(
                        "record behavior out of range".into(),
                    ));
                }
                Ok(IndexedRecord {
                    user,
                    item,
                    behavior,
                    timestamp,
                    category,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset::assemble(records, file.users, file.items, file.vocab))
    }
}
