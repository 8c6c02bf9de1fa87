//! Joint training of the warm branch and the patching networks.
//!
//! Each epoch shuffles the positive interactions, attaches freshly sampled
//! negatives (label 0), and walks the stream in mini-batches. The optimizer
//! sees the mean per-example gradient of the two-term squared loss plus the
//! l2 term; updates are Adam. Early stopping watches validation AUC computed
//! with the same hybrid routing used at inference time.
//!
//! RNG streams are per-purpose (shuffling, negatives, masks, validation
//! negatives), all derived from the run seed, so training is reproducible
//! and batch-level parallelism cannot change results: per-example gradients
//! are reduced over a fixed number of index chunks, not per worker thread.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    backward, hybrid_score, ExampleDraws, FeatureTable, Gradients, MaskDraw, ModelParams,
    TrainExample,
};
use crate::rng::{shuffle, stream, uniform_index};
use crate::walk::LayerReps;

const TAG_SHUFFLE: u64 = 0x7368_7566;
const TAG_NEGATIVE: u64 = 0x6e65_6761;
const TAG_MASK: u64 = 0x6d61_736b;
const TAG_VAL_NEG: u64 = 0x766e_6567;

/// Fixed reduction width for in-batch gradient accumulation. A constant (not
/// the worker count) so results do not depend on the thread pool.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub tau: f64,
    pub n_neg: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 1024,
            l2: 1e-5,
            tau: 0.5,
            n_neg: 4,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !(0.0..=1.0).contains(&self.tau) || self.n_neg == 0 {
            return Err(Error::EmptyPartition(
                "train config: need lr >= 0, 0 <= tau <= 1, n_neg >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Adam over the flattened parameter vector; moments mirror the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let g = grads.flatten();
        let mut theta = params.flatten();
        debug_assert_eq!(g.len(), theta.len());
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for j in 0..theta.len() {
            self.m[j] = self.beta1 * self.m[j] + (1.0 - self.beta1) * g[j];
            self.v[j] = self.beta2 * self.v[j] + (1.0 - self.beta2) * g[j] * g[j];
            let m_hat = self.m[j] / bc1;
            let v_hat = self.v[j] / bc2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        params.assign_from_flat(&theta);
    }
}

/// Draw `n_neg` negatives per positive, uniformly over the warm items,
/// rejecting observed pairs for up to 100 retries before accepting a
/// collision (a user interacting with nearly every item would otherwise
/// never terminate).
pub fn sample_negatives<R: rand::RngCore>(
    positives: &[(u32, u32)],
    warm_items: &[u32],
    observed: &HashSet<(u32, u32)>,
    n_neg: usize,
    rng: &mut R,
) -> Vec<TrainExample> {
    let mut out = Vec::with_capacity(positives.len() * n_neg);
    for &(u, _) in positives {
        for _ in 0..n_neg {
            let mut j = warm_items[uniform_index(rng, warm_items.len())];
            for _ in 0..100 {
                if !observed.contains(&(u, j)) {
                    break;
                }
                j = warm_items[uniform_index(rng, warm_items.len())];
            }
            out.push(TrainExample {
                user: u,
                item: j,
                label: 0.0,
            });
        }
    }
    out
}

/// The epoch's example stream: positives in shuffled order, each followed by
/// its fresh negatives. Every positive appears exactly once per epoch.
pub fn epoch_examples(
    positives: &[(u32, u32)],
    warm_items: &[u32],
    observed: &HashSet<(u32, u32)>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Vec<TrainExample> {
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut shuffle_rng = stream(cfg.seed, TAG_SHUFFLE, epoch as u64);
    shuffle(&mut order, &mut shuffle_rng);
    let mut neg_rng = stream(cfg.seed, TAG_NEGATIVE, epoch as u64);
    let mut out = Vec::with_capacity(positives.len() * (1 + cfg.n_neg));
    for idx in order {
        let (u, i) = positives[idx];
        out.push(TrainExample {
            user: u,
            item: i,
            label: 1.0,
        });
        out.extend(sample_negatives(
            &[(u, i)],
            warm_items,
            observed,
            cfg.n_neg,
            &mut neg_rng,
        ));
    }
    out
}

/// Batch gradient: per-example gradients summed over a fixed set of index
/// chunks (parallel across chunks, sequential combine), then scaled to the
/// mean and augmented with the l2 term.
fn batch_gradient(
    batch: &[TrainExample],
    draws: &[ExampleDraws],
    reps: &LayerReps,
    features: &FeatureTable,
    params: &ModelParams,
    l2: f64,
) -> Result<(Gradients, f64)> {
    let chunk_len = batch.len().div_ceil(GRAD_CHUNKS).max(1);
    let parts: Vec<Result<(Gradients, f64)>> = batch
        .par_chunks(chunk_len)
        .zip(draws.par_chunks(chunk_len))
        .map(|(b, d)| backward(b, d, reps, features, params))
        .collect();
    let mut grads = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    for part in parts {
        let (g, l) = part?;
        grads.add(&g);
        loss_sum += l;
    }
    grads.scale(1.0 / batch.len() as f64);
    grads.add_l2(params, l2);
    Ok((grads, loss_sum))
}

/// One pass over the training positives. Returns the mean per-example data
/// loss (the squared-error terms, before l2), evaluated as the batches were
/// seen.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    positives: &[(u32, u32)],
    warm_items: &[u32],
    observed: &HashSet<(u32, u32)>,
    reps: &LayerReps,
    features: &FeatureTable,
    params: &mut ModelParams,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyPartition("training positives".to_string()));
    }
    let examples = epoch_examples(positives, warm_items, observed, cfg, epoch);
    let mut mask_rng = stream(cfg.seed, TAG_MASK, epoch as u64);
    let draws: Vec<ExampleDraws> = (0..examples.len())
        .map(|_| ExampleDraws {
            user: MaskDraw::sample(&mut mask_rng, cfg.tau),
            item: MaskDraw::sample(&mut mask_rng, cfg.tau),
        })
        .collect();

    let mut loss_sum = 0.0;
    for (batch, batch_draws) in examples
        .chunks(cfg.batch_size)
        .zip(draws.chunks(cfg.batch_size))
    {
        let (grads, batch_loss) =
            batch_gradient(batch, batch_draws, reps, features, params, cfg.l2)?;
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("epoch {epoch} batch loss"),
            });
        }
        adam.step(params, &grads, cfg.lr);
        loss_sum += batch_loss;
    }
    Ok(loss_sum / examples.len() as f64)
}

/// A labelled validation pair (positive or sampled negative).
pub type ValPair = (u32, u32);

/// Negatives for validation AUC: `per_pos` per positive, uniform over all
/// items, rejecting pairs observed anywhere in the known splits. Fixed once
/// per run so epoch AUCs are comparable.
pub fn sample_validation_negatives(
    val_positives: &[ValPair],
    known: &HashSet<(u32, u32)>,
    n_items: usize,
    per_pos: usize,
    seed: u64,
) -> Vec<ValPair> {
    let mut rng = stream(seed, TAG_VAL_NEG, 0);
    let mut out = Vec::with_capacity(val_positives.len() * per_pos);
    for &(u, _) in val_positives {
        for _ in 0..per_pos {
            let mut j = uniform_index(&mut rng, n_items) as u32;
            for _ in 0..100 {
                if !known.contains(&(u, j)) {
                    break;
                }
                j = uniform_index(&mut rng, n_items) as u32;
            }
            out.push((u, j));
        }
    }
    out
}

/// AUC of positive over negative scores with ties counted half. Exact pair
/// counting via a sorted negative array, so the result equals the O(P*N)
/// definition.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = neg.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut favorable = 0.0;
    for &p in pos {
        let below = sorted.partition_point(|&n| n < p);
        let not_above = sorted.partition_point(|&n| n <= p);
        favorable += below as f64 + 0.5 * (not_above - below) as f64;
    }
    favorable / (pos.len() as f64 * neg.len() as f64)
}

/// Validation AUC under the inference routing: warm pairs score warm, pairs
/// with a cold side score through the patching branch.
pub fn validate_auc(
    val_positives: &[ValPair],
    val_negatives: &[ValPair],
    params: &ModelParams,
    reps: &LayerReps,
    features: &FeatureTable,
) -> Result<f64> {
    if val_positives.is_empty() || val_negatives.is_empty() {
        return Err(Error::EmptyValidation);
    }
    let score_all = |pairs: &[ValPair]| -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|&(u, i)| hybrid_score(u as usize, i as usize, reps, features, params))
            .collect()
    };
    let pos = score_all(val_positives)?;
    let neg = score_all(val_negatives)?;
    Ok(auc_from_scores(&pos, &neg))
}

/// Per-epoch training log record.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_auc: f64,
    pub elapsed_ms: u64,
}

/// Outcome of [`fit`]: the best-AUC parameters and the full log.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_auc: f64,
    /// Set when training stopped on a numeric failure; the returned
    /// parameters are the best checkpoint seen before the failure.
    pub aborted: Option<String>,
}

/// Everything [`fit`] needs besides the parameters.
pub struct FitData<'a> {
    pub train_positives: &'a [(u32, u32)],
    pub warm_items: &'a [u32],
    pub observed: &'a HashSet<(u32, u32)>,
    pub val_positives: &'a [ValPair],
    pub val_negatives: &'a [ValPair],
    pub reps: &'a LayerReps,
    pub features: &'a FeatureTable,
}

/// Run epochs until `max_epochs` is reached or validation AUC has not
/// improved for more than `patience` consecutive epochs. Returns the
/// parameters from the best-AUC epoch, never from a worse one.
pub fn fit(data: &FitData, init: ModelParams, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let mut params = init;
    let mut adam = AdamState::new(params.param_count());
    let mut log: Vec<EpochRecord> = Vec::new();
    let mut best_params: Option<ModelParams> = None;
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut aborted = None;

    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        let loss = match train_epoch(
            data.train_positives,
            data.warm_items,
            data.observed,
            data.reps,
            data.features,
            &mut params,
            &mut adam,
            cfg,
            epoch,
        ) {
            Ok(loss) => loss,
            Err(e @ Error::NonFinite { .. }) => {
                if best_params.is_none() {
                    return Err(e);
                }
                aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let val_auc = validate_auc(
            data.val_positives,
            data.val_negatives,
            &params,
            data.reps,
            data.features,
        )?;
        log.push(EpochRecord {
            epoch,
            loss,
            val_auc,
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
        if val_auc > best_auc {
            best_auc = val_auc;
            best_epoch = epoch;
            best_params = Some(params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }

    let params = best_params.ok_or(Error::EmptyValidation)?;
    Ok(FitResult {
        params,
        log,
        best_epoch,
        best_auc,
        aborted,
    })
}
