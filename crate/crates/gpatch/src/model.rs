//! Trainable parameters and the forward/backward math for both branches.
//!
//! The warm branch folds a node's pooled layer rows with per-side adaptive
//! weights and scores a pair by inner product. The patching branch masks the
//! warm representation (whole-vector Bernoulli dropout), concatenates the
//! node's content features, runs the side's mapping network, and again scores
//! by inner product. Both branches share one squared loss per example:
//! `(y - warm)^2 + (y - patched)^2`.
//!
//! Gradients are analytic. Layer representations and embeddings are
//! constants; the patching term's gradient flows back into the adaptive
//! weights through the unmasked warm input unless `detach_patch_input` is
//! set.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::SideEmbedding;
use crate::error::{Error, Result};
use crate::graph::Side;
use crate::walk::LayerReps;

/// Per-side content features. Rows must cover every node the patching branch
/// can touch; a zero-dimension table is valid for sides without content.
pub type Features = SideEmbedding;

/// Content features for both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub users: Features,
    pub items: Features,
}

impl FeatureTable {
    /// Features with dimension zero for every node: the patching networks
    /// then see only the (masked) warm representation.
    pub fn empty(n_users: usize, n_items: usize) -> Self {
        FeatureTable {
            users: Features::filled(n_users, 0),
            items: Features::filled(n_items, 0),
        }
    }

    pub fn side(&self, side: Side) -> &Features {
        match side {
            Side::User => &self.users,
            Side::Item => &self.items,
        }
    }

    pub fn row(&self, side: Side, idx: usize) -> Result<&[f64]> {
        self.side(side).row(idx).ok_or(Error::MissingContent {
            side,
            index: idx,
        })
    }
}

/// One whole-vector mask draw: `masked == true` is the paper's p = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskDraw {
    pub masked: bool,
}

impl MaskDraw {
    pub const KEEP: MaskDraw = MaskDraw { masked: false };
    pub const DROP: MaskDraw = MaskDraw { masked: true };

    pub fn sample<R: Rng>(rng: &mut R, tau: f64) -> MaskDraw {
        MaskDraw {
            masked: rng.random_bool(tau),
        }
    }
}

/// Whole-vector masking: zero vector when the draw is 1, otherwise the input
/// unchanged. Never per-coordinate.
pub fn mask(x: &[f64], draw: MaskDraw) -> Vec<f64> {
    if draw.masked {
        vec![0.0; x.len()]
    } else {
        x.to_vec()
    }
}

/// A two-layer mapping network: `out = W2 tanh(W1 z + b1) + b2`. The output
/// layer is linear so scores remain unbounded like inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// hidden x in_dim, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// out_dim x hidden, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    /// Uniform init scaled by 1/sqrt(fan_in); zero biases.
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        let a1 = 1.0 / (in_dim as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: (0..hidden * in_dim)
                .map(|_| rng.random_range(-a1..a1))
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..out_dim * hidden)
                .map(|_| rng.random_range(-a2..a2))
                .collect(),
            b2: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        }
    }

    /// Forward pass keeping the post-activation hidden vector for backprop.
    fn forward(&self, z0: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(z0.len(), self.in_dim);
        let mut h = self.b1.clone();
        for r in 0..self.hidden {
            let row = &self.w1[r * self.in_dim..(r + 1) * self.in_dim];
            h[r] += dot(row, z0);
        }
        for v in h.iter_mut() {
            *v = v.tanh();
        }
        let mut out = self.b2.clone();
        for r in 0..self.out_dim {
            let row = &self.w2[r * self.hidden..(r + 1) * self.hidden];
            out[r] += dot(row, &h);
        }
        (h, out)
    }
}

/// All trainable parameters: the two per-side layer-weight vectors and the
/// two patching networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub k_layers: usize,
    pub dim: usize,
    pub w_user: Vec<f64>,
    pub w_item: Vec<f64>,
    pub patch_user: Mlp,
    pub patch_item: Mlp,
    /// When set, the patching loss term does not propagate into the layer
    /// weights through the warm-representation input.
    pub detach_patch_input: bool,
}

/// Shape configuration for [`ModelParams::init`].
#[derive(Debug, Clone, Copy)]
pub struct ModelShape {
    pub k_layers: usize,
    pub dim: usize,
    pub user_feat_dim: usize,
    pub item_feat_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl ModelParams {
    /// Layer weights start one-hot at layer 0, so the warm branch begins as
    /// the plain raw-embedding inner product and training grows the deeper
    /// layers only where they help ranking. Network weights are uniform
    /// scaled by 1/sqrt(fan_in) with zero biases.
    pub fn init(shape: ModelShape, seed: u64, detach_patch_input: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6465_6c5f);
        let mut w = vec![0.0; shape.k_layers + 1];
        w[0] = 1.0;
        ModelParams {
            k_layers: shape.k_layers,
            dim: shape.dim,
            w_user: w.clone(),
            w_item: w,
            patch_user: Mlp::init(
                shape.dim + shape.user_feat_dim,
                shape.hidden,
                shape.out_dim,
                &mut rng,
            ),
            patch_item: Mlp::init(
                shape.dim + shape.item_feat_dim,
                shape.hidden,
                shape.out_dim,
                &mut rng,
            ),
            detach_patch_input,
        }
    }

    pub fn layer_weights(&self, side: Side) -> &[f64] {
        match side {
            Side::User => &self.w_user,
            Side::Item => &self.w_item,
        }
    }

    pub fn patch_net(&self, side: Side) -> &Mlp {
        match side {
            Side::User => &self.patch_user,
            Side::Item => &self.patch_item,
        }
    }

    pub fn user_feat_dim(&self) -> usize {
        self.patch_user.in_dim - self.dim
    }

    pub fn item_feat_dim(&self) -> usize {
        self.patch_item.in_dim - self.dim
    }

    /// All parameters as one flat vector, in the order
    /// `w_user, w_item, patch_user(w1,b1,w2,b2), patch_item(w1,b1,w2,b2)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w_user);
        out.extend_from_slice(&self.w_item);
        for mlp in [&self.patch_user, &self.patch_item] {
            out.extend_from_slice(&mlp.w1);
            out.extend_from_slice(&mlp.b1);
            out.extend_from_slice(&mlp.w2);
            out.extend_from_slice(&mlp.b2);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        2 * (self.k_layers + 1)
            + [&self.patch_user, &self.patch_item]
                .iter()
                .map(|m| m.w1.len() + m.b1.len() + m.w2.len() + m.b2.len())
                .sum::<usize>()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        take(&mut self.w_user);
        take(&mut self.w_item);
        for mlp in [&mut self.patch_user, &mut self.patch_item] {
            take(&mut mlp.w1);
            take(&mut mlp.b1);
            take(&mut mlp.w2);
            take(&mut mlp.b2);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fold a node's `(K + 1) x d` layer block with the side's weights.
pub fn fold_layers(block: &[f64], weights: &[f64], dim: usize) -> Vec<f64> {
    debug_assert_eq!(block.len(), weights.len() * dim);
    let mut out = vec![0.0; dim];
    for (k, &w) in weights.iter().enumerate() {
        let row = &block[k * dim..(k + 1) * dim];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    out
}

/// The warm representation of a node: the weighted sum of its layer rows.
pub fn warm_repr(
    side: Side,
    index: usize,
    reps: &LayerReps,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let block = reps
        .block(side, index)
        .ok_or(Error::MissingLayerReps { side, index })?;
    Ok(fold_layers(block, params.layer_weights(side), params.dim))
}

/// Warm-branch score of a warm pair; cold sides are a routing error.
pub fn warm_score(
    user: usize,
    item: usize,
    reps: &LayerReps,
    params: &ModelParams,
) -> Result<f64> {
    if !reps.has(Side::User, user) || !reps.has(Side::Item, item) {
        return Err(Error::ColdSide { user, item });
    }
    let xu = warm_repr(Side::User, user, reps, params)?;
    let xi = warm_repr(Side::Item, item, reps, params)?;
    Ok(dot(&xu, &xi))
}

/// Map `[masked_warm || content]` through the side's patching network.
pub fn patch_repr(
    side: Side,
    masked_warm: &[f64],
    content: &[f64],
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let net = params.patch_net(side);
    if masked_warm.len() != params.dim {
        return Err(Error::DimMismatch {
            context: format!("{side:?} warm input"),
            expected: params.dim,
            got: masked_warm.len(),
        });
    }
    if content.len() != net.in_dim - params.dim {
        return Err(Error::DimMismatch {
            context: format!("{side:?} content"),
            expected: net.in_dim - params.dim,
            got: content.len(),
        });
    }
    let mut z0 = Vec::with_capacity(net.in_dim);
    z0.extend_from_slice(masked_warm);
    z0.extend_from_slice(content);
    let (_, out) = net.forward(&z0);
    Ok(out)
}

fn patched_side(
    side: Side,
    index: usize,
    draw: MaskDraw,
    reps: Option<&LayerReps>,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let warm_in = if draw.masked {
        vec![0.0; params.dim]
    } else {
        let reps = reps.ok_or(Error::MissingLayerReps { side, index })?;
        warm_repr(side, index, reps, params)?
    };
    let content = features.row(side, index)?;
    patch_repr(side, &warm_in, content, params)
}

/// Patching-branch score with explicit mask draws (training form).
pub fn cold_score(
    user: usize,
    item: usize,
    draws: (MaskDraw, MaskDraw),
    reps: Option<&LayerReps>,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<f64> {
    let xuc = patched_side(Side::User, user, draws.0, reps, features, params)?;
    let xic = patched_side(Side::Item, item, draws.1, reps, features, params)?;
    Ok(dot(&xuc, &xic))
}

/// Inference-time patching score: cold sides are masked (p = 1), warm sides
/// keep their warm representation (p = 0).
pub fn cold_score_infer(
    user: usize,
    item: usize,
    reps: Option<&LayerReps>,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<f64> {
    let user_warm = reps.map(|r| r.has(Side::User, user)).unwrap_or(false);
    let item_warm = reps.map(|r| r.has(Side::Item, item)).unwrap_or(false);
    cold_score(
        user,
        item,
        (
            MaskDraw { masked: !user_warm },
            MaskDraw { masked: !item_warm },
        ),
        reps,
        features,
        params,
    )
}

/// The hybrid router: warm pairs score through the warm branch, pairs with
/// any cold side through the patching branch with inference masking.
pub fn hybrid_score(
    user: usize,
    item: usize,
    reps: &LayerReps,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<f64> {
    if reps.has(Side::User, user) && reps.has(Side::Item, item) {
        warm_score(user, item, reps, params)
    } else {
        cold_score_infer(user, item, Some(reps), features, params)
    }
}

// ---------------------------------------------------------------------------
// Training forward/backward.
// ---------------------------------------------------------------------------

/// One labelled training pair.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample {
    pub user: u32,
    pub item: u32,
    pub label: f64,
}

/// Mask draws for one example's patching term (the warm term never masks).
#[derive(Debug, Clone, Copy)]
pub struct ExampleDraws {
    pub user: MaskDraw,
    pub item: MaskDraw,
}

/// Gradient accumulator mirroring [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w_user: Vec<f64>,
    pub w_item: Vec<f64>,
    pub patch_user: MlpGrads,
    pub patch_item: MlpGrads,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            w1: vec![0.0; mlp.w1.len()],
            b1: vec![0.0; mlp.b1.len()],
            w2: vec![0.0; mlp.w2.len()],
            b2: vec![0.0; mlp.b2.len()],
        }
    }

    fn add(&mut self, other: &MlpGrads) {
        add_assign(&mut self.w1, &other.w1);
        add_assign(&mut self.b1, &other.b1);
        add_assign(&mut self.w2, &other.w2);
        add_assign(&mut self.b2, &other.b2);
    }

    fn scale(&mut self, c: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v *= c;
        }
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            w_user: vec![0.0; params.w_user.len()],
            w_item: vec![0.0; params.w_item.len()],
            patch_user: MlpGrads::zeros_like(&params.patch_user),
            patch_item: MlpGrads::zeros_like(&params.patch_item),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        add_assign(&mut self.w_user, &other.w_user);
        add_assign(&mut self.w_item, &other.w_item);
        self.patch_user.add(&other.patch_user);
        self.patch_item.add(&other.patch_item);
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.w_user.iter_mut().chain(&mut self.w_item) {
            *v *= c;
        }
        self.patch_user.scale(c);
        self.patch_item.scale(c);
    }

    /// Add the l2 term `2 * lambda * theta` for the regularized tensors:
    /// layer weights and network weight matrices, never biases.
    pub fn add_l2(&mut self, params: &ModelParams, lambda: f64) {
        let c = 2.0 * lambda;
        for (g, &p) in self.w_user.iter_mut().zip(&params.w_user) {
            *g += c * p;
        }
        for (g, &p) in self.w_item.iter_mut().zip(&params.w_item) {
            *g += c * p;
        }
        for (grads, mlp) in [
            (&mut self.patch_user, &params.patch_user),
            (&mut self.patch_item, &params.patch_item),
        ] {
            for (g, &p) in grads.w1.iter_mut().zip(&mlp.w1) {
                *g += c * p;
            }
            for (g, &p) in grads.w2.iter_mut().zip(&mlp.w2) {
                *g += c * p;
            }
        }
    }

    /// Flat view matching [`ModelParams::flatten`] ordering.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.w_user);
        out.extend_from_slice(&self.w_item);
        for g in [&self.patch_user, &self.patch_item] {
            out.extend_from_slice(&g.w1);
            out.extend_from_slice(&g.b1);
            out.extend_from_slice(&g.w2);
            out.extend_from_slice(&g.b2);
        }
        out
    }
}

struct SideForward {
    /// Network input `[masked_warm || content]`.
    z0: Vec<f64>,
    /// Post-tanh hidden activations.
    h: Vec<f64>,
    /// Patched representation.
    out: Vec<f64>,
    masked: bool,
}

fn forward_side(
    side: Side,
    index: usize,
    warm_x: &[f64],
    draw: MaskDraw,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<SideForward> {
    let net = params.patch_net(side);
    let content = features.row(side, index)?;
    if content.len() != net.in_dim - params.dim {
        return Err(Error::DimMismatch {
            context: format!("{side:?} content"),
            expected: net.in_dim - params.dim,
            got: content.len(),
        });
    }
    let mut z0 = Vec::with_capacity(net.in_dim);
    if draw.masked {
        z0.resize(params.dim, 0.0);
    } else {
        z0.extend_from_slice(warm_x);
    }
    z0.extend_from_slice(content);
    let (h, out) = net.forward(&z0);
    Ok(SideForward {
        z0,
        h,
        out,
        masked: draw.masked,
    })
}

/// Sum of `(y - warm)^2 + (y - patched)^2` over the batch with the given
/// fixed mask draws. This is exactly the quantity [`backward`]
/// differentiates.
pub fn loss_batch(
    batch: &[TrainExample],
    draws: &[ExampleDraws],
    reps: &LayerReps,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<f64> {
    let mut total = 0.0;
    for (ex, dr) in batch.iter().zip(draws) {
        let xu = warm_repr(Side::User, ex.user as usize, reps, params)?;
        let xi = warm_repr(Side::Item, ex.item as usize, reps, params)?;
        let y_warm = dot(&xu, &xi);
        let fu = forward_side(Side::User, ex.user as usize, &xu, dr.user, features, params)?;
        let fi = forward_side(Side::Item, ex.item as usize, &xi, dr.item, features, params)?;
        let y_cold = dot(&fu.out, &fi.out);
        total += (ex.label - y_warm).powi(2) + (ex.label - y_cold).powi(2);
    }
    Ok(total)
}

/// Analytic gradients of [`loss_batch`] (a sum over the batch) with respect
/// to every parameter tensor. Returns the gradients together with the loss.
pub fn backward(
    batch: &[TrainExample],
    draws: &[ExampleDraws],
    reps: &LayerReps,
    features: &FeatureTable,
    params: &ModelParams,
) -> Result<(Gradients, f64)> {
    let mut grads = Gradients::zeros_like(params);
    let mut total = 0.0;
    for (n, (ex, dr)) in batch.iter().zip(draws).enumerate() {
        let loss = accumulate_example(ex, dr, reps, features, params, &mut grads)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!(
                    "loss of batch example {n} (user {}, item {}, label {})",
                    ex.user, ex.item, ex.label
                ),
            });
        }
        total += loss;
    }
    Ok((grads, total))
}

/// Accumulate one example's gradient contribution; returns its loss.
pub(crate) fn accumulate_example(
    ex: &TrainExample,
    dr: &ExampleDraws,
    reps: &LayerReps,
    features: &FeatureTable,
    params: &ModelParams,
    grads: &mut Gradients,
) -> Result<f64> {
    let d = params.dim;
    let u = ex.user as usize;
    let i = ex.item as usize;
    let block_u = reps
        .block(Side::User, u)
        .ok_or(Error::MissingLayerReps { side: Side::User, index: u })?;
    let block_i = reps
        .block(Side::Item, i)
        .ok_or(Error::MissingLayerReps { side: Side::Item, index: i })?;
    let xu = fold_layers(block_u, &params.w_user, d);
    let xi = fold_layers(block_i, &params.w_item, d);

    // Warm term.
    let y_warm = dot(&xu, &xi);
    let r_warm = y_warm - ex.label;
    let g_warm = 2.0 * r_warm;
    for k in 0..=params.k_layers {
        grads.w_user[k] += g_warm * dot(&block_u[k * d..(k + 1) * d], &xi);
        grads.w_item[k] += g_warm * dot(&xu, &block_i[k * d..(k + 1) * d]);
    }

    // Patching term.
    let fu = forward_side(Side::User, u, &xu, dr.user, features, params)?;
    let fi = forward_side(Side::Item, i, &xi, dr.item, features, params)?;
    let y_cold = dot(&fu.out, &fi.out);
    let r_cold = y_cold - ex.label;
    let g_cold = 2.0 * r_cold;

    let g_xu = backprop_side(&fu, &fi.out, g_cold, &params.patch_user, d, &mut grads.patch_user);
    let g_xi = backprop_side(&fi, &fu.out, g_cold, &params.patch_item, d, &mut grads.patch_item);
    if !params.detach_patch_input {
        if let Some(g_xu) = g_xu {
            for k in 0..=params.k_layers {
                grads.w_user[k] += dot(&g_xu, &block_u[k * d..(k + 1) * d]);
            }
        }
        if let Some(g_xi) = g_xi {
            for k in 0..=params.k_layers {
                grads.w_item[k] += dot(&g_xi, &block_i[k * d..(k + 1) * d]);
            }
        }
    }

    Ok(r_warm * r_warm + r_cold * r_cold)
}

/// Backprop through one side's network. `g_out = d loss / d out` is
/// `g_cold * other_out`. Returns the gradient w.r.t. the unmasked warm input
/// (the first `warm_dim` slots of z0), or `None` when the input was masked.
fn backprop_side(
    fwd: &SideForward,
    other_out: &[f64],
    g_cold: f64,
    net: &Mlp,
    warm_dim: usize,
    grads: &mut MlpGrads,
) -> Option<Vec<f64>> {
    let g_out: Vec<f64> = other_out.iter().map(|&v| g_cold * v).collect();
    // Output layer: out = W2 h + b2.
    for r in 0..net.out_dim {
        let gw2 = &mut grads.w2[r * net.hidden..(r + 1) * net.hidden];
        for (slot, &hv) in gw2.iter_mut().zip(&fwd.h) {
            *slot += g_out[r] * hv;
        }
        grads.b2[r] += g_out[r];
    }
    // Hidden layer: h = tanh(W1 z0 + b1); dtanh = 1 - h^2.
    let mut g_h = vec![0.0; net.hidden];
    for r in 0..net.out_dim {
        let row = &net.w2[r * net.hidden..(r + 1) * net.hidden];
        for (gh, &w) in g_h.iter_mut().zip(row) {
            *gh += g_out[r] * w;
        }
    }
    for (gh, &hv) in g_h.iter_mut().zip(&fwd.h) {
        *gh *= 1.0 - hv * hv;
    }
    for r in 0..net.hidden {
        let gw1 = &mut grads.w1[r * net.in_dim..(r + 1) * net.in_dim];
        for (slot, &zv) in gw1.iter_mut().zip(&fwd.z0) {
            *slot += g_h[r] * zv;
        }
        grads.b1[r] += g_h[r];
    }
    if fwd.masked {
        return None;
    }
    // Gradient w.r.t. the warm slice of the input: first warm_dim slots of
    // W1^T g_h.
    let mut g_warm = vec![0.0; warm_dim];
    for r in 0..net.hidden {
        let row = &net.w1[r * net.in_dim..r * net.in_dim + warm_dim];
        for (slot, &w) in g_warm.iter_mut().zip(row) {
            *slot += g_h[r] * w;
        }
    }
    Some(g_warm)
}

// ---------------------------------------------------------------------------
// Checkpoint IO.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"GPM1";

impl ModelParams {
    /// Checkpoint: magic `GPM1`, all shape fields as u32, the detach flag,
    /// then every tensor row-major as little-endian f64 in flatten order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            self.k_layers,
            self.dim,
            self.patch_user.in_dim,
            self.patch_user.hidden,
            self.patch_user.out_dim,
            self.patch_item.in_dim,
            self.patch_item.hidden,
            self.patch_item.out_dim,
        ] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&[self.detach_patch_input as u8])?;
        let flat = self.flatten();
        w.write_all(&(flat.len() as u64).to_le_bytes())?;
        for v in flat {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, path: &str) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                path: path.to_string(),
                msg: "bad magic, expected GPM1".to_string(),
            });
        }
        let mut b4 = [0u8; 4];
        let mut next = || -> Result<usize> {
            r.read_exact(&mut b4).map_err(|e| Error::io(path, e))?;
            Ok(u32::from_le_bytes(b4) as usize)
        };
        let k_layers = next()?;
        let dim = next()?;
        let u_in = next()?;
        let u_hidden = next()?;
        let u_out = next()?;
        let i_in = next()?;
        let i_hidden = next()?;
        let i_out = next()?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(io)?;
        let mut params = ModelParams {
            k_layers,
            dim,
            w_user: vec![0.0; k_layers + 1],
            w_item: vec![0.0; k_layers + 1],
            patch_user: Mlp::zeros(u_in, u_hidden, u_out),
            patch_item: Mlp::zeros(i_in, i_hidden, i_out),
            detach_patch_input: flag[0] != 0,
        };
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let count = u64::from_le_bytes(b8) as usize;
        if count != params.param_count() {
            return Err(Error::Format {
                path: path.to_string(),
                msg: format!(
                    "tensor count {count} does not match shapes ({})",
                    params.param_count()
                ),
            });
        }
        let mut flat = vec![0.0; count];
        for v in flat.iter_mut() {
            r.read_exact(&mut b8).map_err(io)?;
            *v = f64::from_le_bytes(b8);
        }
        params.assign_from_flat(&flat);
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let p = path.display().to_string();
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(&p, e))?);
        self.write_to(&mut f).map_err(|e| Error::io(&p, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p = path.display().to_string();
        let mut f =
            std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(&p, e))?);
        Self::read_from(&mut f, &p)
    }
}
