//! Operator surface: ingestion, training, evaluation, recommendation,
//! synthetic data generation, and gradient checking.
//!
//! Every command is deterministic given its inputs and seed, exits 0 on
//! success, and reports failures as a single `error: ...` line on stderr.

mod config;

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use hmgrec::encoders::EncoderKind;
use hmgrec::eval::{evaluate, leave_one_out_split};
use hmgrec::hmg::{build_hyper_meta_graph, behavior_level_set};
use hmgrec::ingest::{
    compute_statistics, filter_dataset, parse_interaction_log, Dataset,
};
use hmgrec::recommender::{
    gradcheck_dataset, gradcheck_model, load_checkpoint, recommend_topk, save_checkpoint, train,
    FusionKind, LoadedCheckpoint, TrainConfig,
};
use hmgrec::synth::{generate_log, Archetype, SynthConfig};

use config::RunConfig;

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    match s {
        "sg" => Ok(EncoderKind::Sg),
        "gcn" => Ok(EncoderKind::Gcn),
        "gin" => Ok(EncoderKind::Gin),
        "tag" => Ok(EncoderKind::Tag),
        _ => Err(format!("unknown encoder {s:?} (expected sg|gcn|gin|tag)")),
    }
}

fn parse_fusion(s: &str) -> Result<FusionKind, String> {
    match s {
        "mean" => Ok(FusionKind::Mean),
        "sum" => Ok(FusionKind::Sum),
        "mlp" => Ok(FusionKind::Mlp),
        "pnlf" => Ok(FusionKind::Pnlf),
        _ => Err(format!("unknown fusion {s:?} (expected mean|sum|mlp|pnlf)")),
    }
}

#[derive(Parser)]
#[command(name = "hmgrec", version, about = "Multi-behavior recommender over hyper meta-graphs")]
struct Cli {
    /// TOML config file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Graph encoder: sg|gcn|gin|tag.
    #[arg(long, global = true, value_parser = parse_encoder)]
    encoder: Option<EncoderKind>,
    /// Fusion layer: mean|sum|mlp|pnlf.
    #[arg(long, global = true, value_parser = parse_fusion)]
    fusion: Option<FusionKind>,
    /// Objective mixing weight in [0, 1].
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw CSV log, apply quality filters, and write a dataset file.
    Ingest {
        /// Raw log (`user,item,category,behavior,timestamp` lines).
        #[arg(long)]
        input: PathBuf,
        /// Filtered dataset file (JSON).
        #[arg(long)]
        output: PathBuf,
        /// Optional statistics JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train a model; writes a checkpoint and a per-epoch loss history CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Loss history CSV (`epoch,contra_loss,rec_loss`).
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train on the full dataset instead of the leave-one-out train split.
        #[arg(long)]
        no_holdout: bool,
    },
    /// Rank each user's held-out buy against sampled candidates.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        report: PathBuf,
        /// Optional human-readable table.
        #[arg(long)]
        report_text: Option<PathBuf>,
    },
    /// Print the top-K recommendations for one user.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Raw user key as it appeared in the log.
        #[arg(long)]
        user: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Generate a planted-pattern synthetic log.
    Synth {
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 30)]
        items: usize,
        /// Archetype mix, e.g. `direct-buy=0.5,view-then-buy=0.5`.
        #[arg(long, default_value = "direct-buy=0.5,view-then-buy=0.5")]
        mix: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Verify model gradients against finite differences.
    Gradcheck {
        /// Relative error tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Dump one user's hyper meta-graph as a JSON node/edge list.
    Graph {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        user: String,
        /// Behavior level t.
        #[arg(long)]
        level: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut run_cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        run_cfg.seed = Some(seed);
    }
    if let Some(threads) = cli.threads {
        run_cfg.threads = Some(threads);
    }
    if let Some(encoder) = cli.encoder {
        run_cfg.encoder.kind = encoder;
    }
    if let Some(fusion) = cli.fusion {
        run_cfg.fusion.kind = fusion;
    }
    if let Some(beta) = cli.beta {
        run_cfg.train.beta = beta;
    }
    if let Some(threads) = run_cfg.threads.filter(|&t| t > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("failed to configure the thread pool")?;
    }

    match cli.command {
        Command::Ingest {
            input,
            output,
            stats,
        } => cmd_ingest(&run_cfg, &input, &output, stats.as_deref()),
        Command::Train {
            data,
            checkpoint,
            history,
            epochs,
            no_holdout,
        } => cmd_train(
            &run_cfg,
            &data,
            &checkpoint,
            history.as_deref(),
            epochs,
            no_holdout,
        ),
        Command::Evaluate {
            checkpoint,
            data,
            report,
            report_text,
        } => cmd_evaluate(&run_cfg, &checkpoint, &data, &report, report_text.as_deref()),
        Command::Recommend {
            checkpoint,
            data,
            user,
            k,
        } => cmd_recommend(&checkpoint, &data, &user, k),
        Command::Synth {
            users,
            items,
            mix,
            output,
        } => cmd_synth(&run_cfg, users, items, &mix, &output),
        Command::Gradcheck { tolerance } => cmd_gradcheck(&run_cfg, tolerance),
        Command::Graph { data, user, level } => cmd_graph(&data, &user, level),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read dataset file {}", path.display()))?;
    Ok(Dataset::from_json(&text)?)
}

fn resolved_seed(run_cfg: &RunConfig) -> u64 {
    run_cfg.seed.unwrap_or(42)
}

fn cmd_ingest(run_cfg: &RunConfig, input: &Path, output: &Path, stats: Option<&Path>) -> Result<()> {
    if run_cfg.data.min_target_interactions < 1 {
        bail!("min_target_interactions must be at least 1");
    }
    let vocab = run_cfg.vocabulary()?;
    let file = fs::File::open(input)
        .with_context(|| format!("cannot read interaction log {}", input.display()))?;
    let parsed = parse_interaction_log(BufReader::new(file), &run_cfg.columns, &vocab)?;
    eprintln!(
        "parsed {} records ({} malformed, {} unknown-behavior lines rejected)",
        parsed.records.len(),
        parsed.rejected_malformed,
        parsed.rejected_unknown_behavior
    );
    let dataset = filter_dataset(
        parsed.records,
        &vocab,
        run_cfg.data.min_target_interactions,
        run_cfg.data.max_pv_per_user,
    )?;
    fs::write(output, dataset.to_json())
        .with_context(|| format!("cannot write dataset file {}", output.display()))?;
    let table = compute_statistics(&dataset);
    eprintln!(
        "kept {} users, {} items, {} records",
        table.users, table.items, table.total
    );
    if let Some(stats_path) = stats {
        let doc = serde_json::json!({
            "users": table.users,
            "items": table.items,
            "behaviors": table.behaviors,
            "total": table.total,
            "ave_total": table.ave_total,
            "parse": {
                "rejected_malformed": parsed.rejected_malformed,
                "rejected_unknown_behavior": parsed.rejected_unknown_behavior,
            },
        });
        fs::write(stats_path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("cannot write stats file {}", stats_path.display()))?;
    }
    Ok(())
}

fn cmd_train(
    run_cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    history: Option<&Path>,
    epochs: Option<usize>,
    no_holdout: bool,
) -> Result<()> {
    let dataset = load_dataset(data)?;
    let seed = resolved_seed(run_cfg);
    let mut cfg: TrainConfig = run_cfg.train_config(seed);
    if let Some(epochs) = epochs {
        cfg.epochs = epochs;
    }
    cfg.validate().map_err(|e| anyhow!(e))?;

    let fingerprint = dataset.fingerprint();
    let output = if no_holdout {
        train(&dataset, &cfg)?
    } else {
        let split = leave_one_out_split(&dataset, run_cfg.eval.n_candidates, seed)?;
        train(&split.train, &cfg)?
    };

    fs::write(
        checkpoint,
        save_checkpoint(
            &output.model,
            Some(&output.optimizer),
            &fingerprint,
            !no_holdout,
        ),
    )
    .with_context(|| format!("cannot write checkpoint {}", checkpoint.display()))?;

    if let Some(history_path) = history {
        let mut csv = String::from("epoch,contra_loss,rec_loss\n");
        for row in &output.history {
            csv.push_str(&format!("{},{},{}\n", row.epoch, row.contra, row.rec));
        }
        fs::write(history_path, csv)
            .with_context(|| format!("cannot write loss history {}", history_path.display()))?;
    }
    if let Some(last) = output.history.last() {
        eprintln!(
            "trained {} epochs; final losses: contrastive {:.4}, recommendation {:.4}",
            output.history.len(),
            last.contra,
            last.rec
        );
    }
    Ok(())
}

fn cmd_evaluate(
    run_cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    report: &Path,
    report_text: Option<&Path>,
) -> Result<()> {
    let dataset = load_dataset(data)?;
    let text = fs::read_to_string(checkpoint)
        .with_context(|| format!("cannot read checkpoint {}", checkpoint.display()))?;
    let LoadedCheckpoint {
        model,
        dataset_fingerprint,
        trained_on_split,
        ..
    } = load_checkpoint(&text)?;
    if dataset_fingerprint != dataset.fingerprint() {
        bail!("checkpoint was trained on a different dataset (fingerprint mismatch)");
    }
    if !trained_on_split {
        eprintln!(
            "warning: checkpoint was trained on the full dataset; held-out items were seen in training"
        );
    }
    let seed = run_cfg.seed.unwrap_or(model.config.seed);
    let split = leave_one_out_split(&dataset, run_cfg.eval.n_candidates, seed)?;
    let result = evaluate(&model, &split, &run_cfg.eval.ks)?;
    fs::write(report, serde_json::to_string_pretty(&result)?)
        .with_context(|| format!("cannot write report {}", report.display()))?;
    let table = result.render_text();
    if let Some(path) = report_text {
        fs::write(path, &table)
            .with_context(|| format!("cannot write report table {}", path.display()))?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_recommend(checkpoint: &Path, data: &Path, user: &str, k: usize) -> Result<()> {
    let dataset = load_dataset(data)?;
    let text = fs::read_to_string(checkpoint)
        .with_context(|| format!("cannot read checkpoint {}", checkpoint.display()))?;
    let loaded = load_checkpoint(&text)?;
    if loaded.dataset_fingerprint != dataset.fingerprint() {
        bail!("checkpoint was trained on a different dataset (fingerprint mismatch)");
    }
    let user_id = dataset
        .user_id(user)
        .ok_or_else(|| anyhow!("unknown user {user:?}"))?;
    let bought = dataset.bought_items(user_id);
    let candidates: Vec<u32> = (0..dataset.n_items() as u32)
        .filter(|i| bought.binary_search(i).is_err())
        .collect();
    let ranked = recommend_topk(&loaded.model, &dataset, user_id, k, &candidates)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (position, (item, score)) in ranked.iter().enumerate() {
        writeln!(
            out,
            "{}\t{}\t{:.6}",
            position + 1,
            dataset.items[*item as usize],
            score
        )?;
    }
    Ok(())
}

fn cmd_synth(run_cfg: &RunConfig, users: usize, items: usize, mix: &str, output: &Path) -> Result<()> {
    if users == 0 || items < 2 {
        bail!("synthetic logs need at least 1 user and 2 items");
    }
    let mix = parse_mix(mix)?;
    if mix.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
        bail!("mix weights must sum to a positive value");
    }
    let cfg = SynthConfig {
        users,
        items,
        mix,
        seed: resolved_seed(run_cfg),
        ..SynthConfig::default()
    };
    fs::write(output, generate_log(&cfg))
        .with_context(|| format!("cannot write synthetic log {}", output.display()))?;
    Ok(())
}

fn parse_mix(text: &str) -> Result<Vec<(Archetype, f64)>> {
    text.split(',')
        .map(|part| {
            let (name, weight) = part
                .split_once('=')
                .ok_or_else(|| anyhow!("mix entry {part:?} is not name=weight"))?;
            let archetype = Archetype::parse(name.trim())
                .ok_or_else(|| anyhow!("unknown archetype {name:?}"))?;
            let weight: f64 = weight
                .trim()
                .parse()
                .with_context(|| format!("bad weight in mix entry {part:?}"))?;
            if weight < 0.0 {
                bail!("mix weights must be nonnegative");
            }
            Ok((archetype, weight))
        })
        .collect()
}

fn cmd_gradcheck(run_cfg: &RunConfig, tolerance: f64) -> Result<()> {
    let dataset = gradcheck_dataset();
    let seed = resolved_seed(run_cfg);
    let mut cfg = run_cfg.train_config(seed);
    cfg.hidden = 4;
    cfg.encoder.layers = cfg.encoder.layers.min(2);
    let report = gradcheck_model(&dataset, &cfg, 1e-5, tolerance)?;
    for (name, err) in &report.per_param {
        let status = if *err <= tolerance { "PASS" } else { "FAIL" };
        println!("{status} {name} (max relative error {err:.3e})");
    }
    if report.passed() {
        println!("gradcheck passed: {} tensors within {tolerance:.0e}", report.per_param.len());
        Ok(())
    } else {
        bail!("gradcheck failed: worst relative error {:.3e}", report.worst());
    }
}

fn cmd_graph(data: &Path, user: &str, level: usize) -> Result<()> {
    let dataset = load_dataset(data)?;
    let user_id = dataset
        .user_id(user)
        .ok_or_else(|| anyhow!("unknown user {user:?}"))?;
    behavior_level_set(&dataset.vocab, level)?;
    let graph = build_hyper_meta_graph(&dataset, user_id, level, 20)?;
    println!("{}", serde_json::to_string_pretty(&graph.debug_json(&dataset.vocab))?);
    Ok(())
}
