//! Pipeline CLI: synth -> split -> embed -> precompute -> train -> eval /
//! recommend / bench. Every stage writes a digest manifest next to its
//! artifact and verifies its inputs' manifests, so stale intermediate files
//! are caught instead of silently mixed.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod manifest;
mod pipeline;

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use gpatch::data::{
    load_config, make_split, make_synthetic, save_interactions, save_split, Partition,
    SplitConfig, SyntheticSpec,
};
use gpatch::embed::{save_side_binary, save_side_text, BprConfig, SideEmbedding};
use gpatch::error::{Error, Result};
use gpatch::eval::{bench_inference, evaluate, rank_candidates, MetricReport, Scorer, TaskMode};
use gpatch::graph::Interner;
use gpatch::model::{ModelParams, ModelShape};
use gpatch::train::{fit, sample_validation_negatives, validate_auc, FitData, TrainConfig};
use gpatch::walk::{precompute_all, LayerReps, WalkConfig};

use manifest::{verify_artifact, write_manifest};
use pipeline::{
    build_task, load_dataset, load_embedding_table, load_feature_table, partition_pairs,
    training_graph, training_observed, warm_item_mask,
};

#[derive(Parser)]
#[command(
    name = "gpatch",
    version,
    about = "Cold-start recommendation toolkit: warm random-walk scoring plus content patching",
    args_override_self = true
)]
struct Cli {
    /// Cap the worker thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Accepted for interface compatibility; every command is deterministic
    /// under its seed regardless.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Proceed despite stale upstream digests.
    #[arg(long, global = true)]
    force: bool,

    /// Read defaults from a key=value file (command-line flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with tunable content informativeness.
    Synth(SynthArgs),
    /// Sample cold items and partition interactions.
    Split(SplitArgs),
    /// Train BPR-MF warm embeddings on the embed partition.
    Embed(EmbedArgs),
    /// Sample walks and pool layer representations for all warm nodes.
    Precompute(PrecomputeArgs),
    /// Jointly train the adaptive weights and the patching networks.
    Train(TrainArgs),
    /// All-ranking evaluation on the test partition.
    Eval(EvalArgs),
    /// Top-N recommendations for given users.
    Recommend(RecommendArgs),
    /// Compare pre-stored scoring against the full recompute path.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    users: usize,
    #[arg(long, default_value_t = 3000)]
    items: usize,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 16)]
    content_dim: usize,
    /// Content-preference correlation in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    #[arg(long, default_value_t = 0.01)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    cold_frac: f64,
    /// embed,train,val,test ratios over warm interactions.
    #[arg(long, default_value = "0.65,0.15,0.10,0.10", value_parser = parse_ratios)]
    ratios: Ratios,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Ratios([f64; 4]);

fn parse_ratios(s: &str) -> std::result::Result<Ratios, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if parts.len() != 4 {
        return Err(format!("expected four ratios, got {}", parts.len()));
    }
    Ok(Ratios([parts[0], parts[1], parts[2], parts[3]]))
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value_t = 200)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    l2: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_users: PathBuf,
    #[arg(long)]
    out_items: PathBuf,
    /// Write the binary container instead of text.
    #[arg(long)]
    binary: bool,
    /// Rescale trained embeddings so observed pairs score 1.0 on average
    /// (recommended for the squared-loss trainer downstream).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    calibrate_scale: bool,
}

#[derive(Args)]
struct PrecomputeArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    user_emb: PathBuf,
    #[arg(long)]
    item_emb: PathBuf,
    /// Walk length K (subgraph depth).
    #[arg(long, default_value_t = 3)]
    walk_len: usize,
    /// Walks per node S (sampling size).
    #[arg(long, default_value_t = 25)]
    walks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    reps: PathBuf,
    #[arg(long)]
    user_features: Option<PathBuf>,
    #[arg(long)]
    item_features: Option<PathBuf>,
    /// L2-normalize feature rows on load.
    #[arg(long)]
    normalize_features: bool,
    /// Accept feature files that cover only cold nodes.
    #[arg(long)]
    warm_features_optional: bool,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-5)]
    l2: f64,
    /// Representation dropout ratio tau.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 4)]
    n_neg: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Hidden width of the patching networks.
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    /// Output width of the patching networks.
    #[arg(long, default_value_t = 200)]
    out_dim: usize,
    /// Do not propagate the patching loss into the layer weights.
    #[arg(long)]
    detach_patch_input: bool,
    /// Validation negatives sampled per validation positive.
    #[arg(long, default_value_t = 4)]
    val_negatives: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Training log (epoch, loss, val_auc, elapsed_ms per line).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Hybrid,
    Warm,
    Cold,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    reps: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    user_features: Option<PathBuf>,
    #[arg(long)]
    item_features: Option<PathBuf>,
    #[arg(long)]
    normalize_features: bool,
    #[arg(long)]
    warm_features_optional: bool,
    #[arg(long, value_enum, default_value_t = ModeArg::All)]
    mode: ModeArg,
    /// Ranking cutoff N.
    #[arg(long, default_value_t = 20)]
    cutoff: usize,
    /// AUC negatives per test positive (0 disables the AUC record).
    #[arg(long, default_value_t = 4)]
    auc_negatives: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Line-delimited records `metric mode N mean stderr`.
    #[arg(long)]
    records: PathBuf,
    /// Plot-ready per-user CSV.
    #[arg(long)]
    per_user: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    reps: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    user_features: Option<PathBuf>,
    #[arg(long)]
    item_features: Option<PathBuf>,
    #[arg(long)]
    normalize_features: bool,
    #[arg(long)]
    warm_features_optional: bool,
    /// Comma-separated external user IDs.
    #[arg(long)]
    users: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Hybrid)]
    mode: ModeArg,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    user_emb: PathBuf,
    #[arg(long)]
    item_emb: PathBuf,
    #[arg(long)]
    reps: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Number of warm pairs to score.
    #[arg(long, default_value_t = 10000)]
    pairs: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Walk parameters of the recompute path; must match the precompute.
    #[arg(long, default_value_t = 3)]
    walk_len: usize,
    #[arg(long, default_value_t = 25)]
    walks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let args = expand_config_args(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 1; help and version output is a success.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// Splice `key=value` lines of `--config FILE` in as `--key value` pairs
/// right after the subcommand so explicit flags override them.
fn expand_config_args(mut args: Vec<String>) -> Vec<String> {
    let Some(pos) = args.iter().position(|a| a == "--config") else {
        return args;
    };
    let Some(path) = args.get(pos + 1).cloned() else {
        return args;
    };
    let Ok(entries) = load_config(Path::new(&path)) else {
        return args; // unreadable files surface as a normal error later
    };
    let mut injected = Vec::new();
    for (k, v) in entries {
        injected.push(format!("--{k}"));
        if !v.is_empty() {
            injected.push(v);
        }
    }
    // Insert after the subcommand (the first non-flag argument past argv[0]).
    let insert_at = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| !a.starts_with('-'))
        .map(|(idx, _)| idx + 1)
        .unwrap_or(args.len());
    args.splice(insert_at..insert_at, injected);
    args
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a, cli.force),
        Command::Embed(a) => cmd_embed(a, cli.force),
        Command::Precompute(a) => cmd_precompute(a, cli.force),
        Command::Train(a) => cmd_train(a, cli.force),
        Command::Eval(a) => cmd_eval(a, cli.force),
        Command::Recommend(a) => cmd_recommend(a, cli.force),
        Command::Bench(a) => cmd_bench(a, cli.force),
    }
}

fn kv(entries: &[(&str, String)]) -> Vec<(String, String)> {
    entries
        .iter()
        .map(|(k, v)| (format!("config.{k}"), v.clone()))
        .collect()
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_users: a.users,
        n_items: a.items,
        latent_dim: a.latent_dim,
        content_dim: a.content_dim,
        content_corr: a.rho,
        density: a.density,
        seed: a.seed,
    };
    let data = make_synthetic(&spec)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| Error::io(a.out_dir.display().to_string(), e))?;
    let interactions = a.out_dir.join("interactions.tsv");
    let user_features = a.out_dir.join("user_features.tsv");
    let item_features = a.out_dir.join("item_features.tsv");
    save_interactions(&interactions, &data.interactions)?;

    let mut users = Interner::default();
    for u in 0..a.users {
        users.intern(&format!("u{u}"));
    }
    let mut items = Interner::default();
    for i in 0..a.items {
        items.intern(&format!("i{i}"));
    }
    save_side_text(&user_features, &data.user_features, &users)?;
    save_side_text(&item_features, &data.item_features, &items)?;

    let config = kv(&[
        ("users", a.users.to_string()),
        ("items", a.items.to_string()),
        ("latent-dim", a.latent_dim.to_string()),
        ("content-dim", a.content_dim.to_string()),
        ("rho", a.rho.to_string()),
        ("density", a.density.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    write_manifest(&interactions, "synth", &[], &config)?;
    write_manifest(&user_features, "synth", &[], &config)?;
    write_manifest(&item_features, "synth", &[], &config)?;
    println!(
        "synth: {} interactions ({} users, {} items, realized density {:.5})",
        data.interactions.len(),
        a.users,
        a.items,
        data.realized_density
    );
    Ok(())
}

fn cmd_split(a: &SplitArgs, force: bool) -> Result<()> {
    verify_artifact(&a.interactions, force)?;
    let ds = load_dataset(&a.interactions)?;
    let cfg = SplitConfig {
        cold_item_frac: a.cold_frac,
        ratios: a.ratios.0,
        seed: a.seed,
    };
    let split = make_split(&ds.pairs, ds.ids.users.len(), ds.ids.items.len(), &cfg)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    save_split(&a.out, &split, &ds.ids)?;
    write_manifest(
        &a.out,
        "split",
        &[&a.interactions],
        &kv(&[
            ("cold-frac", a.cold_frac.to_string()),
            ("ratios", format!("{:?}", a.ratios.0)),
            ("seed", a.seed.to_string()),
        ]),
    )?;
    println!(
        "split: {} cold items, {} warm users, partitions embed/train/val/test = {}/{}/{}/{}",
        split.cold_item_ids().len(),
        split.warm_users.iter().filter(|&&w| w).count(),
        split.partition(Partition::Embed).count(),
        split.partition(Partition::Train).count(),
        split.partition(Partition::Val).count(),
        split.partition(Partition::Test).count(),
    );
    Ok(())
}

fn load_split_checked(
    interactions: &Path,
    split_path: &Path,
    force: bool,
) -> Result<(pipeline::Dataset, gpatch::data::SplitSpec)> {
    verify_artifact(interactions, force)?;
    verify_artifact(split_path, force)?;
    let ds = load_dataset(interactions)?;
    let split = gpatch::data::load_split(split_path, &ds.ids)?;
    Ok((ds, split))
}

fn cmd_embed(a: &EmbedArgs, force: bool) -> Result<()> {
    let (ds, split) = load_split_checked(&a.interactions, &a.split, force)?;
    let embed_pairs = partition_pairs(&split, Partition::Embed);
    let cfg = BprConfig {
        dim: a.dim,
        lr: a.lr,
        l2: a.l2,
        epochs: a.epochs,
        seed: a.seed,
        unit_positive_scale: a.calibrate_scale,
    };
    let warm_items = warm_item_mask(&split);
    let table = gpatch::embed::train_bpr_mf(
        &embed_pairs,
        split.n_users,
        split.n_items,
        &split.warm_users,
        &warm_items,
        &cfg,
    )?;
    let save = |path: &Path, emb: &SideEmbedding, interner: &Interner| -> Result<()> {
        if a.binary {
            save_side_binary(path, emb, interner)
        } else {
            save_side_text(path, emb, interner)
        }
    };
    save(&a.out_users, &table.users, &ds.ids.users)?;
    save(&a.out_items, &table.items, &ds.ids.items)?;
    let config = kv(&[
        ("dim", a.dim.to_string()),
        ("lr", a.lr.to_string()),
        ("l2", a.l2.to_string()),
        ("epochs", a.epochs.to_string()),
        ("seed", a.seed.to_string()),
        ("calibrate-scale", a.calibrate_scale.to_string()),
    ]);
    write_manifest(&a.out_users, "embed", &[&a.interactions, &a.split], &config)?;
    write_manifest(&a.out_items, "embed", &[&a.interactions, &a.split], &config)?;
    println!(
        "embed: dim {} over {} embed interactions",
        a.dim,
        embed_pairs.len()
    );
    Ok(())
}

fn cmd_precompute(a: &PrecomputeArgs, force: bool) -> Result<()> {
    let (ds, split) = load_split_checked(&a.interactions, &a.split, force)?;
    verify_artifact(&a.user_emb, force)?;
    verify_artifact(&a.item_emb, force)?;
    let emb = load_embedding_table(&a.user_emb, &a.item_emb, &ds.ids, &split)?;
    let graph = training_graph(&split)?;
    let cfg = WalkConfig {
        walk_len: a.walk_len,
        num_walks: a.walks,
        seed: a.seed,
    };
    let warm_items = warm_item_mask(&split);
    let reps = precompute_all(&graph, &emb, &cfg, &split.warm_users, &warm_items)?;
    reps.save(&a.out)?;
    write_manifest(
        &a.out,
        "precompute",
        &[&a.interactions, &a.split, &a.user_emb, &a.item_emb],
        &kv(&[
            ("walk-len", a.walk_len.to_string()),
            ("walks", a.walks.to_string()),
            ("seed", a.seed.to_string()),
        ]),
    )?;
    println!(
        "precompute: {} node blocks of {} layers x dim {}",
        reps.present_count(),
        reps.k_layers + 1,
        reps.dim
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, force: bool) -> Result<()> {
    let (ds, split) = load_split_checked(&a.interactions, &a.split, force)?;
    verify_artifact(&a.reps, force)?;
    let reps = LayerReps::load(&a.reps)?;
    for f in [&a.user_features, &a.item_features].into_iter().flatten() {
        verify_artifact(f, force)?;
    }
    let features = load_feature_table(
        a.user_features.as_deref(),
        a.item_features.as_deref(),
        &ds.ids,
        &split,
        a.normalize_features,
        a.warm_features_optional,
    )?;

    let train_positives = partition_pairs(&split, Partition::Train);
    let observed = training_observed(&split);
    let warm_items = split.warm_item_ids();
    let val_positives = partition_pairs(&split, Partition::Val);
    let mut known: HashSet<(u32, u32)> = observed.clone();
    known.extend(val_positives.iter().copied());
    let val_negatives = sample_validation_negatives(
        &val_positives,
        &known,
        split.n_items,
        a.val_negatives,
        a.seed,
    );

    let shape = ModelShape {
        k_layers: reps.k_layers,
        dim: reps.dim,
        user_feat_dim: features.users.dim,
        item_feat_dim: features.items.dim,
        hidden: a.hidden,
        out_dim: a.out_dim,
    };
    let init = ModelParams::init(shape, a.seed, a.detach_patch_input);
    let cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        l2: a.l2,
        tau: a.tau,
        n_neg: a.n_neg,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
    };
    let data = FitData {
        train_positives: &train_positives,
        warm_items: &warm_items,
        observed: &observed,
        val_positives: &val_positives,
        val_negatives: &val_negatives,
        reps: &reps,
        features: &features,
    };
    let outcome = fit(&data, init, &cfg)?;
    outcome.params.save(&a.out)?;
    if let Some(log_path) = &a.log {
        let p = log_path.display().to_string();
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(log_path).map_err(|e| Error::io(&p, e))?,
        );
        writeln!(f, "# epoch,loss,val_auc,elapsed_ms").map_err(|e| Error::io(&p, e))?;
        for r in &outcome.log {
            writeln!(f, "{},{:?},{:?},{}", r.epoch, r.loss, r.val_auc, r.elapsed_ms)
                .map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut inputs: Vec<&Path> = vec![&a.interactions, &a.split, &a.reps];
    if let Some(p) = &a.user_features {
        inputs.push(p);
    }
    if let Some(p) = &a.item_features {
        inputs.push(p);
    }
    write_manifest(
        &a.out,
        "train",
        &inputs,
        &kv(&[
            ("lr", a.lr.to_string()),
            ("batch-size", a.batch_size.to_string()),
            ("l2", a.l2.to_string()),
            ("tau", a.tau.to_string()),
            ("n-neg", a.n_neg.to_string()),
            ("max-epochs", a.max_epochs.to_string()),
            ("patience", a.patience.to_string()),
            ("hidden", a.hidden.to_string()),
            ("out-dim", a.out_dim.to_string()),
            ("detach-patch-input", a.detach_patch_input.to_string()),
            ("val-negatives", a.val_negatives.to_string()),
            ("seed", a.seed.to_string()),
        ]),
    )?;
    if let Some(reason) = &outcome.aborted {
        eprintln!("warning: training aborted early: {reason}");
    }
    println!(
        "train: best epoch {} with validation AUC {:.4} over {} epochs",
        outcome.best_epoch,
        outcome.best_auc,
        outcome.log.len()
    );
    Ok(())
}

struct LoadedModel {
    ds: pipeline::Dataset,
    split: gpatch::data::SplitSpec,
    reps: LayerReps,
    features: gpatch::model::FeatureTable,
    params: ModelParams,
}

#[allow(clippy::too_many_arguments)]
fn load_model_stack(
    interactions: &Path,
    split_path: &Path,
    reps_path: &Path,
    model_path: &Path,
    user_features: Option<&Path>,
    item_features: Option<&Path>,
    normalize: bool,
    warm_optional: bool,
    force: bool,
) -> Result<LoadedModel> {
    let (ds, split) = load_split_checked(interactions, split_path, force)?;
    verify_artifact(reps_path, force)?;
    verify_artifact(model_path, force)?;
    let reps = LayerReps::load(reps_path)?;
    let params = ModelParams::load(model_path)?;
    for f in [user_features, item_features].into_iter().flatten() {
        verify_artifact(f, force)?;
    }
    let features = load_feature_table(
        user_features,
        item_features,
        &ds.ids,
        &split,
        normalize,
        warm_optional,
    )?;
    Ok(LoadedModel {
        ds,
        split,
        reps,
        features,
        params,
    })
}

fn report_lines(report: &MetricReport) -> Vec<String> {
    vec![
        format!(
            "recall\t{}\t{}\t{:?}\t{:?}",
            report.mode.name(),
            report.cutoff,
            report.mean_recall,
            report.stderr_recall
        ),
        format!(
            "precision\t{}\t{}\t{:?}\t{:?}",
            report.mode.name(),
            report.cutoff,
            report.mean_precision,
            report.stderr_precision
        ),
        format!(
            "ndcg\t{}\t{}\t{:?}\t{:?}",
            report.mode.name(),
            report.cutoff,
            report.mean_ndcg,
            report.stderr_ndcg
        ),
    ]
}

fn cmd_eval(a: &EvalArgs, force: bool) -> Result<()> {
    let stack = load_model_stack(
        &a.interactions,
        &a.split,
        &a.reps,
        &a.model,
        a.user_features.as_deref(),
        a.item_features.as_deref(),
        a.normalize_features,
        a.warm_features_optional,
        force,
    )?;
    let scorer = Scorer::new(&stack.params, &stack.reps, &stack.features)?;
    let modes: Vec<TaskMode> = match a.mode {
        ModeArg::Hybrid => vec![TaskMode::Hybrid],
        ModeArg::Warm => vec![TaskMode::Warm],
        ModeArg::Cold => vec![TaskMode::Cold],
        ModeArg::All => vec![TaskMode::Hybrid, TaskMode::Warm, TaskMode::Cold],
    };

    let mut records: Vec<String> = Vec::new();
    let mut per_user_rows: Vec<String> = Vec::new();
    for mode in modes {
        let task = build_task(&stack.split, mode, a.cutoff);
        if task.candidates.is_empty() {
            eprintln!("warning: no candidates for {} task, skipped", mode.name());
            continue;
        }
        let started = std::time::Instant::now();
        let report = evaluate(&scorer, &task)?;
        println!(
            "{} @ {}: recall {:.4}  precision {:.4}  ndcg {:.4}  ({} users, {} skipped, {} ms)",
            mode.name(),
            a.cutoff,
            report.mean_recall,
            report.mean_precision,
            report.mean_ndcg,
            report.per_user.len(),
            report.skipped_users,
            started.elapsed().as_millis()
        );
        records.extend(report_lines(&report));
        for m in &report.per_user {
            per_user_rows.push(format!(
                "{},{},{:?},{:?},{:?}",
                mode.name(),
                stack.ds.ids.users.name(m.user),
                m.recall,
                m.precision,
                m.ndcg
            ));
        }
        if a.auc_negatives > 0 {
            let positives: Vec<(u32, u32)> = stack
                .split
                .partition(Partition::Test)
                .filter(|&(_, i)| task.candidates.contains(&i))
                .collect();
            if !positives.is_empty() {
                let negatives = sample_validation_negatives(
                    &positives,
                    &stack.split.observed(),
                    stack.split.n_items,
                    a.auc_negatives,
                    a.seed,
                );
                let auc = validate_auc(
                    &positives,
                    &negatives,
                    &stack.params,
                    &stack.reps,
                    &stack.features,
                )?;
                println!("{} AUC: {:.4}", mode.name(), auc);
                records.push(format!("auc\t{}\t{}\t{:?}\t0.0", mode.name(), a.cutoff, auc));
            }
        }
    }

    let p = a.records.display().to_string();
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(&a.records).map_err(|e| Error::io(&p, e))?);
    writeln!(f, "# metric\tmode\tN\tmean\tstderr").map_err(|e| Error::io(&p, e))?;
    for line in &records {
        writeln!(f, "{line}").map_err(|e| Error::io(&p, e))?;
    }
    drop(f);
    if let Some(per_user_path) = &a.per_user {
        let p = per_user_path.display().to_string();
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(per_user_path).map_err(|e| Error::io(&p, e))?,
        );
        writeln!(f, "mode,user,recall,precision,ndcg").map_err(|e| Error::io(&p, e))?;
        for row in &per_user_rows {
            writeln!(f, "{row}").map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut inputs: Vec<&Path> = vec![&a.interactions, &a.split, &a.reps, &a.model];
    if let Some(pth) = &a.user_features {
        inputs.push(pth);
    }
    if let Some(pth) = &a.item_features {
        inputs.push(pth);
    }
    write_manifest(
        &a.records,
        "eval",
        &inputs,
        &kv(&[
            ("mode", format!("{:?}", a.mode)),
            ("cutoff", a.cutoff.to_string()),
            ("auc-negatives", a.auc_negatives.to_string()),
            ("seed", a.seed.to_string()),
        ]),
    )?;
    Ok(())
}

fn cmd_recommend(a: &RecommendArgs, force: bool) -> Result<()> {
    let stack = load_model_stack(
        &a.interactions,
        &a.split,
        &a.reps,
        &a.model,
        a.user_features.as_deref(),
        a.item_features.as_deref(),
        a.normalize_features,
        a.warm_features_optional,
        force,
    )?;
    let scorer = Scorer::new(&stack.params, &stack.reps, &stack.features)?;
    let mode = match a.mode {
        ModeArg::Warm => TaskMode::Warm,
        ModeArg::Cold => TaskMode::Cold,
        _ => TaskMode::Hybrid,
    };
    let task = build_task(&stack.split, mode, a.n);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for user_id in a.users.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some(user) = stack.ds.ids.users.get(user_id) else {
            eprintln!("error: unknown user ID {user_id:?}");
            continue;
        };
        let exclude: HashSet<u32> = task.exclude[user as usize].iter().copied().collect();
        let ranked = rank_candidates(&scorer, user as usize, &task.candidates, &exclude, a.n)?;
        for (rank, (item, score)) in ranked.iter().enumerate() {
            writeln!(
                out,
                "{user_id}\t{}\t{}\t{score:?}",
                rank + 1,
                stack.ds.ids.items.name(*item)
            )
            .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, force: bool) -> Result<()> {
    let (ds, split) = load_split_checked(&a.interactions, &a.split, force)?;
    for p in [&a.user_emb, &a.item_emb, &a.reps, &a.model] {
        verify_artifact(p, force)?;
    }
    let emb = load_embedding_table(&a.user_emb, &a.item_emb, &ds.ids, &split)?;
    let reps = LayerReps::load(&a.reps)?;
    let params = ModelParams::load(&a.model)?;
    let graph = training_graph(&split)?;
    let cfg = WalkConfig {
        walk_len: a.walk_len,
        num_walks: a.walks,
        seed: a.seed,
    };
    // Deterministic warm pair sample: round-robin over warm users and items.
    let warm_users: Vec<u32> = (0..split.n_users as u32)
        .filter(|&u| split.warm_users[u as usize])
        .collect();
    let warm_items = split.warm_item_ids();
    if warm_users.is_empty() || warm_items.is_empty() {
        return Err(Error::EmptyPartition(
            "warm nodes for benchmark".to_string(),
        ));
    }
    let pairs: Vec<(u32, u32)> = (0..a.pairs)
        .map(|n| {
            (
                warm_users[n % warm_users.len()],
                warm_items[(n * 31) % warm_items.len()],
            )
        })
        .collect();
    let report = bench_inference(&graph, &emb, &cfg, &params, &reps, &pairs, a.repeats)?;
    let ms = |ns: &[u128]| {
        ns.iter()
            .map(|&v| format!("{:.2}", v as f64 / 1e6))
            .collect::<Vec<_>>()
            .join(",")
    };
    println!(
        "bench: {} scorings x {} repeats",
        report.scorings, report.repeats
    );
    println!(
        "  pre-stored path   (ms per repeat): {}",
        ms(&report.precomputed_ns)
    );
    println!(
        "  full recompute    (ms per repeat): {}",
        ms(&report.recompute_ns)
    );
    println!("  speedup ratio: {:.1}x", report.ratio);
    println!("  max score difference: {:.3e}", report.max_abs_diff);
    Ok(())
}
