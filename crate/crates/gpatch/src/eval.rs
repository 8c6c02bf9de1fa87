//! All-ranking evaluation, significance testing, and the inference benchmark.
//!
//! Evaluation ranks every candidate item for every user (no sampled
//! shortlists), excluding the user's training positives, with ties broken by
//! ascending item index. Users with no ground truth in the task are excluded
//! from the means.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::model::{dot, fold_layers, hybrid_score, patch_repr, FeatureTable, ModelParams};
use crate::train::auc_from_scores;
use crate::walk::{pool_layers, sample_walks, LayerReps, WalkConfig};

/// Which slice of the catalog a ranking task covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Hybrid,
    Warm,
    Cold,
}

impl TaskMode {
    pub fn name(&self) -> &'static str {
        match self {
            TaskMode::Hybrid => "hybrid",
            TaskMode::Warm => "warm",
            TaskMode::Cold => "cold",
        }
    }
}

/// One all-ranking evaluation task. `truth` and `exclude` are per user
/// index; candidates are shared across users.
#[derive(Debug, Clone)]
pub struct RankingTask {
    pub mode: TaskMode,
    pub cutoff: usize,
    pub candidates: Vec<u32>,
    pub truth: Vec<Vec<u32>>,
    pub exclude: Vec<Vec<u32>>,
}

/// Per-user metric triple.
#[derive(Debug, Clone, Copy)]
pub struct UserMetrics {
    pub user: u32,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
}

/// Task-level report: per-user rows plus their means and standard errors.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mode: TaskMode,
    pub cutoff: usize,
    pub per_user: Vec<UserMetrics>,
    pub mean_recall: f64,
    pub mean_precision: f64,
    pub mean_ndcg: f64,
    pub stderr_recall: f64,
    pub stderr_precision: f64,
    pub stderr_ndcg: f64,
    /// Users skipped for lack of ground truth or candidates.
    pub skipped_users: usize,
}

/// Precomputed scoring state shared by evaluation, recommendation, and the
/// benchmark: folded warm representations for warm nodes and patched
/// representations for every node with content (inference masking: p = 1 on
/// cold sides, p = 0 on warm sides).
pub struct Scorer<'a> {
    params: &'a ModelParams,
    reps: &'a LayerReps,
    features: &'a FeatureTable,
    user_warm: Vec<Option<Vec<f64>>>,
    item_warm: Vec<Option<Vec<f64>>>,
    user_patched: Vec<Option<Vec<f64>>>,
    item_patched: Vec<Option<Vec<f64>>>,
}

/// Per-node cached vectors: warm (folded) and patched representations.
type SideCaches = (Vec<Option<Vec<f64>>>, Vec<Option<Vec<f64>>>);

impl<'a> Scorer<'a> {
    pub fn new(
        params: &'a ModelParams,
        reps: &'a LayerReps,
        features: &'a FeatureTable,
    ) -> Result<Scorer<'a>> {
        let build_side = |side: Side, count: usize| -> Result<SideCaches> {
            let mut warm_x = vec![None; count];
            let mut patched = vec![None; count];
            for idx in 0..count {
                let folded = reps
                    .block(side, idx)
                    .map(|b| fold_layers(b, params.layer_weights(side), params.dim));
                let masked_input = match &folded {
                    Some(x) => x.clone(),
                    None => vec![0.0; params.dim],
                };
                if let Some(content) = features.side(side).row(idx) {
                    patched[idx] = Some(patch_repr(side, &masked_input, content, params)?);
                }
                warm_x[idx] = folded;
            }
            Ok((warm_x, patched))
        };
        let (user_warm, user_patched) = build_side(Side::User, reps.n_users())?;
        let (item_warm, item_patched) = build_side(Side::Item, reps.n_items())?;
        Ok(Scorer {
            params,
            reps,
            features,
            user_warm,
            item_warm,
            user_patched,
            item_patched,
        })
    }

    pub fn is_warm(&self, side: Side, idx: usize) -> bool {
        self.reps.has(side, idx)
    }

    /// Routed relevance score: the warm branch for warm pairs, the patching
    /// branch otherwise.
    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        if let (Some(xu), Some(xi)) = (&self.user_warm[user], &self.item_warm[item]) {
            return Ok(dot(xu, xi));
        }
        let xuc = self.user_patched[user]
            .as_ref()
            .ok_or(Error::MissingContent {
                side: Side::User,
                index: user,
            })?;
        let xic = self.item_patched[item]
            .as_ref()
            .ok_or(Error::MissingContent {
                side: Side::Item,
                index: item,
            })?;
        Ok(dot(xuc, xic))
    }

    /// Uncached reference scoring; the cached path must agree with it.
    pub fn score_uncached(&self, user: usize, item: usize) -> Result<f64> {
        hybrid_score(user, item, self.reps, self.features, self.params)
    }

    pub fn n_users(&self) -> usize {
        self.user_warm.len()
    }
}

/// Rank a user's candidates: exclusions filtered, descending score, ties by
/// ascending item index, truncated to `n`.
pub fn rank_candidates(
    scorer: &Scorer,
    user: usize,
    candidates: &[u32],
    exclude: &HashSet<u32>,
    n: usize,
) -> Result<Vec<(u32, f64)>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for &item in candidates {
        if exclude.contains(&item) {
            continue;
        }
        // `+ 0.0` canonicalizes -0.0 to +0.0 so zero scores tie under
        // total_cmp and fall through to the index tie-break.
        scored.push((item, scorer.score(user, item as usize)? + 0.0));
    }
    scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    Ok(scored)
}

/// Recall, precision and NDCG at `n` for one ranked list (binary gain,
/// 1/log2(rank+1) discount, IDCG over min(n, |truth|) ideal hits).
pub fn metrics_at_n(ranked: &[u32], truth: &HashSet<u32>, n: usize) -> (f64, f64, f64) {
    if truth.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(n).enumerate() {
        if truth.contains(item) {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal = n.min(truth.len());
    let idcg: f64 = (0..ideal).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    (
        hits as f64 / truth.len() as f64,
        hits as f64 / n as f64,
        dcg / idcg,
    )
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Run one task over every user: per-user ranking in parallel, deterministic
/// ordered assembly.
pub fn evaluate(scorer: &Scorer, task: &RankingTask) -> Result<MetricReport> {
    let rows: Vec<Result<Option<UserMetrics>>> = (0..scorer.n_users())
        .into_par_iter()
        .map(|user| {
            let truth: HashSet<u32> = task.truth[user].iter().copied().collect();
            if truth.is_empty() {
                return Ok(None);
            }
            let exclude: HashSet<u32> = task.exclude[user].iter().copied().collect();
            if task.candidates.iter().all(|c| exclude.contains(c)) {
                return Ok(None);
            }
            let ranked = rank_candidates(scorer, user, &task.candidates, &exclude, task.cutoff)?;
            let items: Vec<u32> = ranked.iter().map(|&(i, _)| i).collect();
            let (recall, precision, ndcg) = metrics_at_n(&items, &truth, task.cutoff);
            Ok(Some(UserMetrics {
                user: user as u32,
                recall,
                precision,
                ndcg,
            }))
        })
        .collect();

    let mut per_user = Vec::new();
    let mut skipped = 0usize;
    for row in rows {
        match row? {
            Some(m) => per_user.push(m),
            None => skipped += 1,
        }
    }
    let recalls: Vec<f64> = per_user.iter().map(|m| m.recall).collect();
    let precisions: Vec<f64> = per_user.iter().map(|m| m.precision).collect();
    let ndcgs: Vec<f64> = per_user.iter().map(|m| m.ndcg).collect();
    let (mean_recall, stderr_recall) = mean_and_stderr(&recalls);
    let (mean_precision, stderr_precision) = mean_and_stderr(&precisions);
    let (mean_ndcg, stderr_ndcg) = mean_and_stderr(&ndcgs);
    Ok(MetricReport {
        mode: task.mode,
        cutoff: task.cutoff,
        per_user,
        mean_recall,
        mean_precision,
        mean_ndcg,
        stderr_recall,
        stderr_precision,
        stderr_ndcg,
        skipped_users: skipped,
    })
}

/// Exact AUC with ties counted half (shared with the trainer).
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    auc_from_scores(pos_scores, neg_scores)
}

/// Two-sided paired t-test outcome.
#[derive(Debug, Clone, Copy)]
pub struct PairedTtest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Zero-variance differences: p is 1 for equal means, 0 otherwise.
    pub degenerate: bool,
}

/// Two-sided paired t-test over equal-length per-user metric samples.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<PairedTtest> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            context: "paired t-test samples".to_string(),
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyPartition(
            "paired t-test needs n >= 2".to_string(),
        ));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(PairedTtest {
            t: if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY * mean.signum()
            },
            df: n - 1.0,
            p: if mean == 0.0 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTtest {
        t,
        df: n - 1.0,
        p,
        degenerate: false,
    })
}

/// Timing comparison between scoring from pre-stored representations and
/// recomputing the full walk-pool-fold path per scoring.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub scorings: usize,
    pub repeats: usize,
    /// Wall-clock duration per repeat, nanoseconds.
    pub precomputed_ns: Vec<u128>,
    pub recompute_ns: Vec<u128>,
    pub max_abs_diff: f64,
    /// Mean recompute time over mean precomputed time.
    pub ratio: f64,
}

/// Score `pairs` of warm nodes both ways, `repeats` times each, and compare.
pub fn bench_inference(
    graph: &BipartiteGraph,
    emb: &EmbeddingTable,
    walk_cfg: &WalkConfig,
    params: &ModelParams,
    reps: &LayerReps,
    pairs: &[(u32, u32)],
    repeats: usize,
) -> Result<BenchReport> {
    // Pre-stored path: the folded representation per node is the stored
    // artifact; scoring is one dot product per pair.
    let mut user_x: Vec<Option<Vec<f64>>> = vec![None; reps.n_users()];
    let mut item_x: Vec<Option<Vec<f64>>> = vec![None; reps.n_items()];
    for &(u, i) in pairs {
        if user_x[u as usize].is_none() {
            let block = reps
                .block(Side::User, u as usize)
                .ok_or(Error::MissingLayerReps {
                    side: Side::User,
                    index: u as usize,
                })?;
            user_x[u as usize] = Some(fold_layers(block, &params.w_user, params.dim));
        }
        if item_x[i as usize].is_none() {
            let block = reps
                .block(Side::Item, i as usize)
                .ok_or(Error::MissingLayerReps {
                    side: Side::Item,
                    index: i as usize,
                })?;
            item_x[i as usize] = Some(fold_layers(block, &params.w_item, params.dim));
        }
    }

    let mut fast_scores = vec![0.0; pairs.len()];
    let mut precomputed_ns = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let started = Instant::now();
        for (slot, &(u, i)) in fast_scores.iter_mut().zip(pairs) {
            let xu = user_x[u as usize].as_ref().unwrap();
            let xi = item_x[i as usize].as_ref().unwrap();
            *slot = dot(xu, xi);
        }
        precomputed_ns.push(started.elapsed().as_nanos());
    }

    let mut slow_scores = vec![0.0; pairs.len()];
    let mut recompute_ns = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let started = Instant::now();
        for (slot, &(u, i)) in slow_scores.iter_mut().zip(pairs) {
            let set_u = sample_walks(graph, Side::User, u, walk_cfg)?;
            let block_u = pool_layers(&set_u, emb)?;
            let xu = fold_layers(&block_u, &params.w_user, params.dim);
            let set_i = sample_walks(graph, Side::Item, i, walk_cfg)?;
            let block_i = pool_layers(&set_i, emb)?;
            let xi = fold_layers(&block_i, &params.w_item, params.dim);
            *slot = dot(&xu, &xi);
        }
        recompute_ns.push(started.elapsed().as_nanos());
    }

    let max_abs_diff = fast_scores
        .iter()
        .zip(&slow_scores)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mean = |v: &[u128]| v.iter().sum::<u128>() as f64 / v.len() as f64;
    Ok(BenchReport {
        scorings: pairs.len(),
        repeats,
        ratio: mean(&recompute_ns) / mean(&precomputed_ns),
        precomputed_ns,
        recompute_ns,
        max_abs_diff,
    })
}
