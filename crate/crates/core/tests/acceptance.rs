//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Criteria are property-based and desk-scale by design; published full-scale
//! metrics are kept as non-gating references (criterion 11 only runs when a
//! full dataset is supplied via `TAOBAO_LOG`).
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::io::Cursor;
use std::time::Instant;

use common::{graph_chains, mean, oracle_chains, planted_dataset, rec, study_config};
use hmgrec::autodiff::{Params, Tape, Tensor};
use hmgrec::contrastive::infonce_pair_loss;
use hmgrec::encoders::EncoderKind;
use hmgrec::eval::{evaluate, leave_one_out_split, ndcg_at_k, recall_at_k};
use hmgrec::hmg::{behavior_level_set, build_hyper_meta_graph};
use hmgrec::ingest::{
    compute_statistics, filter_dataset, index_records, parse_interaction_log, BehaviorVocab,
    ColumnSchema, InteractionRecord,
};
use hmgrec::recommender::{
    gradcheck_dataset, gradcheck_model, train, FusionConfig, FusionKind, ModelState, TrainConfig,
};
use hmgrec::synth::{generate_log, SynthConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pass(n: usize, name: &str, detail: &str) {
    println!("criterion {n:2} ({name}): PASS {detail}");
}

#[test]
fn criterion_01_graph_oracle_equivalence() {
    let started = Instant::now();
    let vocab = BehaviorVocab::taobao();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce91);
    let mut checked = 0usize;
    for _ in 0..200 {
        let n_records = rng.gen_range(1..=20);
        let n_users = rng.gen_range(1..=3);
        let n_items = rng.gen_range(1..=5);
        let records: Vec<InteractionRecord> = (0..n_records)
            .map(|_| {
                rec(
                    &format!("u{}", rng.gen_range(0..n_users)),
                    &format!("i{}", rng.gen_range(0..n_items)),
                    rng.gen_range(0..4),
                    rng.gen_range(0..10),
                )
            })
            .collect();
        let max_chain = rng.gen_range(1..=20);
        let dataset = index_records(records.clone(), &vocab).unwrap();
        for user_id in 0..dataset.n_users() as u32 {
            let raw_user = dataset.users[user_id as usize].clone();
            for level in 0..=vocab.max_rank() {
                let graph = build_hyper_meta_graph(&dataset, user_id, level, max_chain).unwrap();
                assert_eq!(
                    graph_chains(&graph, &dataset),
                    oracle_chains(&records, &raw_user, level, vocab.len(), max_chain),
                    "user {raw_user}, level {level}, max_chain {max_chain}"
                );
                checked += 1;
            }
        }
    }

    // Viewed-twice-then-bought example: a 5-node chain at the top level and
    // a 3-node chain at level 0.
    let fig = index_records(
        vec![
            rec("u", "phone", 0, 1),
            rec("u", "phone", 0, 2),
            rec("u", "phone", 3, 3),
        ],
        &vocab,
    )
    .unwrap();
    let top = build_hyper_meta_graph(&fig, 0, 3, 20).unwrap();
    assert_eq!((top.nodes.len(), top.edges.len()), (5, 4));
    let base = build_hyper_meta_graph(&fig, 0, 0, 20).unwrap();
    assert_eq!((base.nodes.len(), base.edges.len()), (3, 2));

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(1, "graph oracle equivalence", &format!("{checked} graphs matched in {elapsed:.2?}"));
}

#[test]
fn criterion_02_level_set_semantics() {
    let vocab = BehaviorVocab::taobao();
    let name_sets: Vec<Vec<&str>> = (0..=3)
        .map(|t| {
            behavior_level_set(&vocab, t)
                .unwrap()
                .behaviors
                .iter()
                .map(|&r| vocab.name_of(r))
                .collect()
        })
        .collect();
    assert_eq!(name_sets[0], vec!["buy"]);
    assert_eq!(name_sets[1], vec!["pv", "buy"]);
    assert_eq!(name_sets[2], vec!["pv", "fav", "buy"]);
    assert_eq!(name_sets[3], vec!["pv", "fav", "cart", "buy"]);
    pass(2, "level-set semantics", "{buy} .. {pv,fav,cart,buy}");
}

#[test]
fn criterion_03_gradient_correctness_all_encoders_and_fusions() {
    let started = Instant::now();
    let dataset = gradcheck_dataset();
    let mut worst = 0.0f64;
    for encoder in EncoderKind::all() {
        for fusion in FusionKind::all() {
            let mut cfg = TrainConfig {
                hidden: 4,
                beta: 0.5,
                seed: 11,
                ..TrainConfig::default()
            };
            cfg.encoder.kind = encoder;
            cfg.fusion = FusionConfig {
                kind: fusion,
                mlp_hidden: None,
            };
            let report = gradcheck_model(&dataset, &cfg, 1e-5, 1e-4).unwrap();
            assert!(
                report.passed(),
                "{}+{}: worst relative error {}",
                encoder.name(),
                fusion.name(),
                report.worst()
            );
            worst = worst.max(report.worst());
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    pass(
        3,
        "gradient correctness",
        &format!("16 encoder x fusion combinations, worst error {worst:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_04_infonce_closed_forms() {
    let eval = |d_pos: f64, d_neg: f64| {
        let params = Params::new();
        let mut tape = Tape::new(&params);
        let p = tape.constant(Tensor::scalar(d_pos));
        let n = tape.constant(Tensor::scalar(d_neg));
        let loss = infonce_pair_loss(&mut tape, p, n);
        tape.scalar(loss)
    };
    assert!((eval(0.7, 0.7) - std::f64::consts::LN_2).abs() < 1e-9);
    assert!((eval(1.0, 0.0) - 0.31326).abs() < 1e-5);
    let mut prev = f64::INFINITY;
    let mut d_pos = -3.0;
    while d_pos <= 3.0 {
        let v = eval(d_pos, 0.4);
        assert!(v < prev, "loss must strictly decrease in d_pos (at {d_pos})");
        prev = v;
        d_pos += 0.05;
    }
    pass(4, "InfoNCE closed forms", "ln 2 at equality; 0.31326 at unit gap; monotone");
}

#[test]
fn criterion_05_metric_closed_forms() {
    assert_eq!(ndcg_at_k(3, 5), 0.5);
    for k in [5usize, 10] {
        for rank in 1..=11usize {
            let recall = if rank <= k { 1.0 } else { 0.0 };
            let ndcg = if rank <= k {
                1.0 / ((rank + 1) as f64).log2()
            } else {
                0.0
            };
            assert_eq!(recall_at_k(rank, k), recall, "recall rank {rank} k {k}");
            assert_eq!(ndcg_at_k(rank, k), ndcg, "ndcg rank {rank} k {k}");
        }
    }
    pass(5, "metric closed forms", "ranks 1..=11, K in {5, 10}, exact");
}

#[test]
fn criterion_06_filtering_fixpoint_contract() {
    // Item "x" reaches 5 buys only through user "weak", who has 4 buys in
    // total: pass one removes "weak", pass two must remove "x".
    let mut records = Vec::new();
    for (i, item) in ["x", "p1", "p2", "p3"].iter().enumerate() {
        records.push(rec("weak", item, 3, i as u64));
    }
    for u in ["s1", "s2", "s3", "s4"] {
        records.push(rec(u, "x", 3, 100));
    }
    for u in ["s1", "s2", "s3", "s4", "s5"] {
        for (i, item) in ["q1", "q2", "q3", "q4", "q5"].iter().enumerate() {
            records.push(rec(u, item, 3, 200 + i as u64));
        }
    }
    let vocab = BehaviorVocab::taobao();
    let ds = filter_dataset(records, &vocab, 5, None).unwrap();
    assert!(ds.user_id("weak").is_none());
    assert!(ds.item_id("x").is_none(), "x must fall on the second pass");

    let target = ds.vocab.max_rank();
    let mut user_buys = vec![0usize; ds.n_users()];
    let mut item_buys = vec![0usize; ds.n_items()];
    for r in &ds.records {
        if r.behavior == target {
            user_buys[r.user as usize] += 1;
            item_buys[r.item as usize] += 1;
        }
    }
    assert!(user_buys.iter().all(|&c| c >= 5));
    assert!(item_buys.iter().all(|&c| c >= 5));

    // re-filtering is a no-op
    let raw: Vec<InteractionRecord> = ds
        .records
        .iter()
        .map(|r| rec(&ds.users[r.user as usize], &ds.items[r.item as usize], r.behavior, r.timestamp))
        .collect();
    let again = filter_dataset(raw, &vocab, 5, None).unwrap();
    assert_eq!(again.records, ds.records);
    assert_eq!(again.users, ds.users);
    assert_eq!(again.items, ds.items);
    pass(6, "filtering fixpoint", "two-pass cascade resolved; refilter is a no-op");
}

#[test]
fn criterion_07_training_dynamics() {
    let started = Instant::now();
    let dataset = planted_dataset();
    let seeds = [1u64, 2, 3, 4, 5];
    let epochs = study_config(0.5, 1).epochs;
    let mut contra_mean = vec![0.0f64; epochs];
    let mut rec_mean = vec![0.0f64; epochs];
    for &seed in &seeds {
        let split = leave_one_out_split(&dataset, 99, seed).unwrap();
        let out = train(&split.train, &study_config(0.5, seed)).unwrap();
        assert_eq!(out.history.len(), epochs);
        for (e, row) in out.history.iter().enumerate() {
            contra_mean[e] += row.contra / seeds.len() as f64;
            rec_mean[e] += row.rec / seeds.len() as f64;
        }
    }

    let drop = contra_mean[0] - contra_mean[epochs - 1];
    assert!(
        drop > 0.0,
        "contrastive loss must end below its first epoch ({} -> {})",
        contra_mean[0],
        contra_mean[epochs - 1]
    );

    // first epoch from which every epoch-to-epoch delta stays below 5% of
    // the total drop
    let threshold = 0.05 * drop;
    let mut stable_epoch = epochs - 1;
    for e in (1..epochs).rev() {
        if (contra_mean[e] - contra_mean[e - 1]).abs() < threshold {
            stable_epoch = e;
        } else {
            break;
        }
    }
    let rec_min_epoch = rec_mean
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert!(
        stable_epoch < rec_min_epoch,
        "contrastive loss must stabilize (epoch {stable_epoch}) before the \
         recommendation loss bottoms out (epoch {rec_min_epoch})"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    pass(
        7,
        "training dynamics",
        &format!(
            "contra {:.3} -> {:.3}, stable at epoch {stable_epoch}, rec minimum at epoch {rec_min_epoch}, {elapsed:.1?}",
            contra_mean[0],
            contra_mean[epochs - 1]
        ),
    );
}

#[test]
fn criterion_08_contrastive_benefit_beta_study() {
    let started = Instant::now();
    let dataset = planted_dataset();
    let seeds = [1u64, 2, 3, 4, 5];
    let recall_at = |beta: f64| -> f64 {
        let recalls: Vec<f64> = seeds
            .iter()
            .map(|&seed| {
                let split = leave_one_out_split(&dataset, 99, seed).unwrap();
                let out = train(&split.train, &study_config(beta, seed)).unwrap();
                let report = evaluate(&out.model, &split, &[5]).unwrap();
                report.metrics[0].recall
            })
            .collect();
        mean(&recalls)
    };
    let balanced = recall_at(0.5);
    let rec_only = recall_at(1.0);
    let contra_heavy = recall_at(0.05);
    assert!(
        balanced >= rec_only,
        "beta=0.5 ({balanced:.4}) must not underperform beta=1.0 ({rec_only:.4})"
    );
    assert!(
        contra_heavy < balanced,
        "beta=0.05 ({contra_heavy:.4}) must underperform beta=0.5 ({balanced:.4})"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}");
    pass(
        8,
        "contrastive benefit",
        &format!(
            "Recall@5: beta 0.05 -> {contra_heavy:.4}, 0.5 -> {balanced:.4}, 1.0 -> {rec_only:.4}, {elapsed:.1?}"
        ),
    );
}

#[test]
fn criterion_09_random_scorer_sanity() {
    // Enough items that every user gets a full 99-candidate pool.
    let vocab = BehaviorVocab::taobao();
    let log = generate_log(&SynthConfig {
        users: 2300,
        items: 200,
        seed: 99,
        ..SynthConfig::default()
    });
    let parsed =
        parse_interaction_log(Cursor::new(log), &ColumnSchema::default(), &vocab).unwrap();
    let dataset = filter_dataset(parsed.records, &vocab, 5, None).unwrap();
    assert!(dataset.n_users() >= 2000, "only {} users", dataset.n_users());

    let split = leave_one_out_split(&dataset, 99, 17).unwrap();
    for entry in &split.holdout {
        assert_eq!(entry.candidates.len(), 99, "pools must be 99+1");
    }
    let cfg = study_config(0.5, 1234);
    let model = ModelState::init(
        dataset.n_users(),
        dataset.n_items(),
        vocab.len(),
        &cfg,
    );
    let report = evaluate(&model, &split, &[5]).unwrap();
    let observed = report.metrics[0].recall;
    let n = report.n_users as f64;
    let sigma = (0.05 * 0.95 / n).sqrt();
    assert!(
        (observed - 0.05).abs() < 3.0 * sigma,
        "untrained Recall@5 {observed:.4} outside 0.05 +- {:.4} over {n} users",
        3.0 * sigma
    );
    pass(
        9,
        "random-scorer sanity",
        &format!("untrained Recall@5 {observed:.4} within 3 sigma of 0.05 over {n} users"),
    );
}

#[test]
fn criterion_10_pipeline_determinism() {
    let run = || -> String {
        let vocab = BehaviorVocab::taobao();
        let log = generate_log(&SynthConfig {
            users: 60,
            items: 40,
            seed: 13,
            ..SynthConfig::default()
        });
        let parsed =
            parse_interaction_log(Cursor::new(log), &ColumnSchema::default(), &vocab).unwrap();
        let dataset = filter_dataset(parsed.records, &vocab, 5, None).unwrap();
        let split = leave_one_out_split(&dataset, 99, 13).unwrap();
        let mut cfg = study_config(0.5, 13);
        cfg.epochs = 5;
        let out = train(&split.train, &cfg).unwrap();
        let report = evaluate(&out.model, &split, &[5, 10]).unwrap();
        serde_json::to_string_pretty(&report).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second, "report JSON must be byte-identical");
    pass(10, "pipeline determinism", "two ingest->train->evaluate runs byte-identical");
}

#[test]
fn criterion_11_reference_statistics() {
    // Non-gating reference: only runs when a full filtered dataset is
    // supplied. Published full-scale counts: 48946 users and 380877 buys
    // (4.20%) after filtering Taobao at 5 target interactions.
    let Ok(path) = std::env::var("TAOBAO_LOG") else {
        pass(
            11,
            "reference statistics",
            "SKIP - full dataset not supplied (non-gating); set TAOBAO_LOG to enable",
        );
        return;
    };
    let vocab = BehaviorVocab::taobao();
    let file = std::fs::File::open(&path).expect("cannot open TAOBAO_LOG");
    let parsed = parse_interaction_log(
        std::io::BufReader::new(file),
        &ColumnSchema::default(),
        &vocab,
    )
    .unwrap();
    let dataset = filter_dataset(parsed.records, &vocab, 5, None).unwrap();
    let stats = compute_statistics(&dataset);
    assert_eq!(stats.users, 48946);
    let buy = stats.behaviors.iter().find(|b| b.name == "buy").unwrap();
    assert_eq!(buy.count, 380877);
    assert!((buy.percentage - 4.20).abs() < 0.01);
    pass(11, "reference statistics", "full Taobao counts reproduced");
}
