//! Shared stage plumbing: dataset loading, split-aligned graph and table
//! construction, and evaluation task assembly.

use std::collections::HashSet;
use std::path::Path;

use gpatch::data::{load_features, load_interactions, FeatureLoadOptions, Partition, SplitSpec};
use gpatch::embed::{align_rows, read_side_auto, EmbeddingTable, LoadOptions, SideEmbedding};
use gpatch::error::Result;
use gpatch::eval::{RankingTask, TaskMode};
use gpatch::graph::{BipartiteGraph, IdInterner, Side};
use gpatch::model::{FeatureTable, Features};

/// Interactions with their deterministic first-occurrence interning.
pub struct Dataset {
    pub ids: IdInterner,
    /// Deduplicated dense pairs.
    pub pairs: Vec<(u32, u32)>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let raw = load_interactions(path)?;
    let (ids, dense) = IdInterner::intern_pairs(&raw);
    let mut pairs = dense;
    pairs.sort_unstable();
    pairs.dedup();
    Ok(Dataset { ids, pairs })
}

/// The graph visible at training time: embed + train interactions over the
/// full node index space (cold nodes are present but isolated).
pub fn training_graph(split: &SplitSpec) -> Result<BipartiteGraph> {
    let edges: Vec<(u32, u32)> = split
        .assignments
        .iter()
        .filter(|(_, _, tag)| matches!(tag, Partition::Embed | Partition::Train))
        .map(|&(u, i, _)| (u, i))
        .collect();
    BipartiteGraph::from_pairs(&edges, split.n_users, split.n_items)
}

pub fn warm_item_mask(split: &SplitSpec) -> Vec<bool> {
    split.cold_items.iter().map(|&c| !c).collect()
}

/// Load one side's embeddings and align them; every warm node must have a
/// row.
pub fn load_side_embedding(
    path: &Path,
    ids: &IdInterner,
    side: Side,
    warm: &[bool],
) -> Result<SideEmbedding> {
    let raw = read_side_auto(path)?;
    let loaded = align_rows(raw, ids.side(side), side, warm, LoadOptions { strict: true })?;
    for id in &loaded.unknown_ids {
        eprintln!("warning: embedding row for unknown {side:?} id {id:?} ignored");
    }
    Ok(loaded.embedding)
}

pub fn load_embedding_table(
    user_path: &Path,
    item_path: &Path,
    ids: &IdInterner,
    split: &SplitSpec,
) -> Result<EmbeddingTable> {
    let users = load_side_embedding(user_path, ids, Side::User, &split.warm_users)?;
    let items = load_side_embedding(item_path, ids, Side::Item, &warm_item_mask(split))?;
    Ok(EmbeddingTable { users, items })
}

/// Assemble the feature table; a side without a file gets the
/// zero-dimension table (patching then sees only the masked warm input).
pub fn load_feature_table(
    user_path: Option<&Path>,
    item_path: Option<&Path>,
    ids: &IdInterner,
    split: &SplitSpec,
    normalize: bool,
    warm_optional: bool,
) -> Result<FeatureTable> {
    let opts = FeatureLoadOptions {
        warm_optional,
        normalize,
    };
    let cold_users: Vec<bool> = split.warm_users.iter().map(|&w| !w).collect();
    let users = match user_path {
        Some(p) => load_features(p, &ids.users, Side::User, &cold_users, opts)?,
        None => Features::filled(split.n_users, 0),
    };
    let items = match item_path {
        Some(p) => load_features(p, &ids.items, Side::Item, &split.cold_items, opts)?,
        None => Features::filled(split.n_items, 0),
    };
    Ok(FeatureTable { users, items })
}

/// Positives of one partition.
pub fn partition_pairs(split: &SplitSpec, tag: Partition) -> Vec<(u32, u32)> {
    split.partition(tag).collect()
}

/// Pairs the model may see during training (negative-sampling rejection set).
pub fn training_observed(split: &SplitSpec) -> HashSet<(u32, u32)> {
    split
        .assignments
        .iter()
        .filter(|(_, _, tag)| matches!(tag, Partition::Embed | Partition::Train))
        .map(|&(u, i, _)| (u, i))
        .collect()
}

/// Build the all-ranking task for a mode: candidates from the catalog slice,
/// per-user truth from the test partition, training positives excluded.
pub fn build_task(split: &SplitSpec, mode: TaskMode, cutoff: usize) -> RankingTask {
    let candidates: Vec<u32> = match mode {
        TaskMode::Hybrid => (0..split.n_items as u32).collect(),
        TaskMode::Warm => split.warm_item_ids(),
        TaskMode::Cold => split.cold_item_ids(),
    };
    let mut truth: Vec<Vec<u32>> = vec![Vec::new(); split.n_users];
    for (u, i) in split.partition(Partition::Test) {
        let is_cold = split.cold_items[i as usize];
        let keep = match mode {
            TaskMode::Hybrid => true,
            TaskMode::Warm => !is_cold,
            TaskMode::Cold => is_cold,
        };
        if keep {
            truth[u as usize].push(i);
        }
    }
    let mut exclude: Vec<Vec<u32>> = vec![Vec::new(); split.n_users];
    for (u, i) in training_observed(split) {
        exclude[u as usize].push(i);
    }
    for list in exclude.iter_mut() {
        list.sort_unstable();
    }
    RankingTask {
        mode,
        cutoff,
        candidates,
        truth,
        exclude,
    }
}
