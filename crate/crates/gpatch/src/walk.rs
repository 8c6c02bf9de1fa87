//! Random-walk sampling and layer pooling: the warm-branch precompute.
//!
//! For each warm node `t` we sample `S` walks of `K` steps. A walk step moves
//! to a uniformly chosen neighbor of the previous node, so sides alternate
//! (user, item, user, ...) starting from the root's opposite side. The walks
//! are then mean-pooled per position into `K + 1` layer vectors: layer 0 is
//! the node's own embedding, layer `k >= 1` is the mean over walks of the
//! embedding at walk position `k`.
//!
//! Determinism: walk `s` from node `(side, t)` is driven by a ChaCha8 stream
//! seeded with the 32-byte block
//! `master_seed_le || side_le || node_index_le || walk_ordinal_le`
//! (four u64 little-endian words, side encoded 0 for users, 1 for items).
//! Neighbor choice is `(next_u64 * degree) >> 64`. Both are documented so a
//! cache produced by one run can be verified independently; parallelism
//! cannot change the output because no state is shared across nodes.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::rng::uniform_index;

const REPS_MAGIC: &[u8; 4] = b"GPL1";

/// Walk sampling parameters: `walk_len` is the subgraph depth K,
/// `num_walks` the sampling size S.
#[derive(Debug, Clone, Copy)]
pub struct WalkConfig {
    pub walk_len: usize,
    pub num_walks: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_len: 3,
            num_walks: 25,
            seed: 0,
        }
    }
}

impl WalkConfig {
    fn validate(&self) -> Result<()> {
        if self.walk_len == 0 || self.num_walks == 0 {
            return Err(Error::EmptyPartition(
                "walk_len and num_walks must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// The sampled walk set for one root node. Walks hold the node indices at
/// positions `1..=K`; the root (position 0) is implicit.
#[derive(Debug, Clone)]
pub struct WalkSet {
    pub root_side: Side,
    pub root_index: u32,
    pub walk_len: usize,
    pub walks: Vec<Vec<u32>>,
}

impl WalkSet {
    /// Side of the node at walk position `k` (root is position 0).
    pub fn side_at(&self, k: usize) -> Side {
        if k.is_multiple_of(2) {
            self.root_side
        } else {
            self.root_side.opposite()
        }
    }
}

/// RNG for walk `ordinal` from node `(side, index)` under `master` seed.
pub fn walk_rng(master: u64, side: Side, index: u32, ordinal: u32) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&(matches!(side, Side::Item) as u64).to_le_bytes());
    seed[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    seed[24..32].copy_from_slice(&(ordinal as u64).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn one_walk(
    graph: &BipartiteGraph,
    root_side: Side,
    root_index: u32,
    walk_len: usize,
    ordinal: u32,
    master: u64,
) -> Result<Vec<u32>> {
    let mut rng = walk_rng(master, root_side, root_index, ordinal);
    let mut walk = Vec::with_capacity(walk_len);
    let mut side = root_side;
    let mut node = root_index;
    for step in 0..walk_len {
        let neigh = graph.neighbors(side, node as usize)?;
        if neigh.is_empty() {
            // Only possible at the root: every interior node has at least
            // its predecessor as a neighbor in a symmetric graph.
            debug_assert_eq!(step, 0);
            return Err(Error::ColdNodeWalk {
                side: root_side,
                index: root_index as usize,
            });
        }
        node = neigh[uniform_index(&mut rng, neigh.len())];
        side = side.opposite();
        walk.push(node);
    }
    Ok(walk)
}

/// Sample the full walk set for one root node. Roots with no neighbors are
/// rejected: they are cold and never reach the warm branch.
pub fn sample_walks(
    graph: &BipartiteGraph,
    root_side: Side,
    root_index: u32,
    cfg: &WalkConfig,
) -> Result<WalkSet> {
    cfg.validate()?;
    let walks = (0..cfg.num_walks)
        .map(|s| one_walk(graph, root_side, root_index, cfg.walk_len, s as u32, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(WalkSet {
        root_side,
        root_index,
        walk_len: cfg.walk_len,
        walks,
    })
}

/// Mean-pool a walk set into a `(K + 1) x d` row-major block. Row 0 is the
/// root's raw embedding; row k averages the embeddings at walk position k
/// over walks in ordinal order.
pub fn pool_layers(set: &WalkSet, emb: &EmbeddingTable) -> Result<Vec<f64>> {
    let d = emb.dim();
    if emb.items.dim != d {
        return Err(Error::DimMismatch {
            context: "item embedding dim".to_string(),
            expected: d,
            got: emb.items.dim,
        });
    }
    let k_layers = set.walk_len;
    let mut block = vec![0.0; (k_layers + 1) * d];
    let root = emb
        .row(set.root_side, set.root_index as usize)
        .ok_or_else(|| Error::MissingEmbedding {
            side: set.root_side,
            id: format!("index {}", set.root_index),
        })?;
    block[..d].copy_from_slice(root);
    for k in 1..=k_layers {
        let side = set.side_at(k);
        let row = &mut block[k * d..(k + 1) * d];
        for walk in &set.walks {
            let node = walk[k - 1] as usize;
            let e = emb.row(side, node).ok_or_else(|| Error::MissingEmbedding {
                side,
                id: format!("index {node}"),
            })?;
            for (acc, &v) in row.iter_mut().zip(e) {
                *acc += v;
            }
        }
        let s = set.walks.len() as f64;
        for acc in row.iter_mut() {
            *acc /= s;
        }
    }
    Ok(block)
}

/// Pooled layer representations for every warm node, stored as flat
/// `(K + 1) * d` blocks per node for cache-friendly scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReps {
    pub k_layers: usize,
    pub dim: usize,
    user_present: Vec<bool>,
    user_data: Vec<f64>,
    item_present: Vec<bool>,
    item_data: Vec<f64>,
}

impl LayerReps {
    pub fn empty(k_layers: usize, dim: usize, n_users: usize, n_items: usize) -> Self {
        let block = (k_layers + 1) * dim;
        LayerReps {
            k_layers,
            dim,
            user_present: vec![false; n_users],
            user_data: vec![0.0; n_users * block],
            item_present: vec![false; n_items],
            item_data: vec![0.0; n_items * block],
        }
    }

    pub fn block_len(&self) -> usize {
        (self.k_layers + 1) * self.dim
    }

    pub fn n_users(&self) -> usize {
        self.user_present.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_present.len()
    }

    pub fn has(&self, side: Side, index: usize) -> bool {
        match side {
            Side::User => index < self.user_present.len() && self.user_present[index],
            Side::Item => index < self.item_present.len() && self.item_present[index],
        }
    }

    /// The `(K + 1) x d` block for a node, row-major; `None` for cold nodes.
    pub fn block(&self, side: Side, index: usize) -> Option<&[f64]> {
        if !self.has(side, index) {
            return None;
        }
        let b = self.block_len();
        let data = match side {
            Side::User => &self.user_data,
            Side::Item => &self.item_data,
        };
        Some(&data[index * b..(index + 1) * b])
    }

    pub fn set_block(&mut self, side: Side, index: usize, block: &[f64]) -> Result<()> {
        let b = self.block_len();
        if block.len() != b {
            return Err(Error::DimMismatch {
                context: "layer rep block".to_string(),
                expected: b,
                got: block.len(),
            });
        }
        let (present, data) = match side {
            Side::User => (&mut self.user_present, &mut self.user_data),
            Side::Item => (&mut self.item_present, &mut self.item_data),
        };
        data[index * b..(index + 1) * b].copy_from_slice(block);
        present[index] = true;
        Ok(())
    }

    pub fn present_count(&self) -> usize {
        self.user_present.iter().filter(|&&p| p).count()
            + self.item_present.iter().filter(|&&p| p).count()
    }

    /// Cache file: magic `GPL1`, K u32, d u32, user/item counts u64, one
    /// presence byte per node (users then items), then the present blocks
    /// row-major in index order (users then items), little-endian f64.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(REPS_MAGIC)?;
        w.write_all(&(self.k_layers as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.n_users() as u64).to_le_bytes())?;
        w.write_all(&(self.n_items() as u64).to_le_bytes())?;
        for &p in self.user_present.iter().chain(self.item_present.iter()) {
            w.write_all(&[p as u8])?;
        }
        let b = self.block_len();
        for (present, data) in [
            (&self.user_present, &self.user_data),
            (&self.item_present, &self.item_data),
        ] {
            for (idx, &p) in present.iter().enumerate() {
                if p {
                    for v in &data[idx * b..(idx + 1) * b] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, path: &str) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != REPS_MAGIC {
            return Err(Error::Format {
                path: path.to_string(),
                msg: "bad magic, expected GPL1".to_string(),
            });
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(io)?;
        let k_layers = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(io)?;
        let n_users = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8).map_err(io)?;
        let n_items = u64::from_le_bytes(b8) as usize;
        let mut flags = vec![0u8; n_users + n_items];
        r.read_exact(&mut flags).map_err(io)?;
        let mut reps = LayerReps::empty(k_layers, dim, n_users, n_items);
        reps.user_present = flags[..n_users].iter().map(|&f| f != 0).collect();
        reps.item_present = flags[n_users..].iter().map(|&f| f != 0).collect();
        let b = reps.block_len();
        for side in [Side::User, Side::Item] {
            let (present, data) = match side {
                Side::User => (reps.user_present.clone(), &mut reps.user_data),
                Side::Item => (reps.item_present.clone(), &mut reps.item_data),
            };
            for (idx, p) in present.iter().enumerate() {
                if *p {
                    for slot in data[idx * b..(idx + 1) * b].iter_mut() {
                        r.read_exact(&mut b8).map_err(io)?;
                        *slot = f64::from_le_bytes(b8);
                    }
                }
            }
        }
        Ok(reps)
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

/// Precompute layer representations for every flagged warm node. The output
/// is independent of scheduling because each node's walks use their own
/// seeded streams; nodes are processed in parallel.
pub fn precompute_all(
    graph: &BipartiteGraph,
    emb: &EmbeddingTable,
    cfg: &WalkConfig,
    warm_users: &[bool],
    warm_items: &[bool],
) -> Result<LayerReps> {
    cfg.validate()?;
    let d = emb.dim();
    let mut reps = LayerReps::empty(cfg.walk_len, d, graph.n_users(), graph.n_items());
    let block = reps.block_len();

    for (side, warm, data) in [
        (Side::User, warm_users, &mut reps.user_data),
        (Side::Item, warm_items, &mut reps.item_data),
    ] {
        let results: Vec<Result<()>> = data
            .par_chunks_mut(block)
            .enumerate()
            .map(|(idx, out)| {
                if !warm[idx] {
                    return Ok(());
                }
                let set = sample_walks(graph, side, idx as u32, cfg)?;
                let pooled = pool_layers(&set, emb)?;
                out.copy_from_slice(&pooled);
                Ok(())
            })
            .collect();
        for r in results {
            r?;
        }
    }
    reps.user_present = warm_users.to_vec();
    reps.item_present = warm_items.to_vec();
    Ok(reps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::SideEmbedding;
    use crate::graph::BipartiteGraph;

    fn table(user_rows: &[&[f64]], item_rows: &[&[f64]]) -> EmbeddingTable {
        let d = user_rows.first().map(|r| r.len()).unwrap_or(0);
        let mut users = SideEmbedding::zeros(user_rows.len(), d);
        let mut items = SideEmbedding::zeros(item_rows.len(), d);
        for (i, r) in user_rows.iter().enumerate() {
            users.set_row(i, r).unwrap();
        }
        for (i, r) in item_rows.iter().enumerate() {
            items.set_row(i, r).unwrap();
        }
        EmbeddingTable { users, items }
    }

    fn star_graph() -> BipartiteGraph {
        // u0 -- i0 only
        BipartiteGraph::from_pairs(&[(0, 0)], 1, 1).unwrap()
    }

    #[test]
    fn star_graph_walks_are_forced() {
        let g = star_graph();
        let cfg = WalkConfig {
            walk_len: 3,
            num_walks: 5,
            seed: 9,
        };
        let set = sample_walks(&g, Side::User, 0, &cfg).unwrap();
        assert_eq!(set.walks.len(), 5);
        for walk in &set.walks {
            assert_eq!(walk, &[0, 0, 0]);
        }
    }

    #[test]
    fn star_graph_pooling_is_analytic() {
        let g = star_graph();
        let emb = table(&[&[1.0, 2.0]], &[&[-3.0, 4.0]]);
        let cfg = WalkConfig {
            walk_len: 3,
            num_walks: 25,
            seed: 0,
        };
        let set = sample_walks(&g, Side::User, 0, &cfg).unwrap();
        let block = pool_layers(&set, &emb).unwrap();
        // rows: E_u0, E_i0, E_u0, E_i0
        assert_eq!(&block[0..2], &[1.0, 2.0]);
        assert_eq!(&block[2..4], &[-3.0, 4.0]);
        assert_eq!(&block[4..6], &[1.0, 2.0]);
        assert_eq!(&block[6..8], &[-3.0, 4.0]);
    }

    #[test]
    fn single_walk_pooling_is_exact() {
        // S=1: row k equals the embedding of the single walk's k-th node.
        let g = BipartiteGraph::from_pairs(&[(0, 0), (0, 1), (1, 0), (1, 1)], 2, 2).unwrap();
        let emb = table(&[&[1.0], &[2.0]], &[&[10.0], &[20.0]]);
        let cfg = WalkConfig {
            walk_len: 2,
            num_walks: 1,
            seed: 3,
        };
        let set = sample_walks(&g, Side::User, 0, &cfg).unwrap();
        let block = pool_layers(&set, &emb).unwrap();
        assert_eq!(block[0], 1.0);
        assert_eq!(block[1], emb.row(Side::Item, set.walks[0][0] as usize).unwrap()[0]);
        assert_eq!(block[2], emb.row(Side::User, set.walks[0][1] as usize).unwrap()[0]);
    }

    #[test]
    fn cold_root_is_rejected() {
        let g = BipartiteGraph::from_pairs(&[(0, 0)], 2, 1).unwrap();
        let cfg = WalkConfig::default();
        match sample_walks(&g, Side::User, 1, &cfg) {
            Err(Error::ColdNodeWalk { index: 1, .. }) => {}
            other => panic!("expected cold-node error, got {other:?}"),
        }
    }

    #[test]
    fn first_step_frequencies_are_uniform() {
        // Root with two neighbors: over many walks each neighbor leads the
        // walk about half the time.
        let g = BipartiteGraph::from_pairs(&[(0, 0), (0, 1), (1, 0), (1, 1)], 2, 2).unwrap();
        let cfg = WalkConfig {
            walk_len: 1,
            num_walks: 100_000,
            seed: 42,
        };
        let set = sample_walks(&g, Side::User, 0, &cfg).unwrap();
        let count0 = set.walks.iter().filter(|w| w[0] == 0).count();
        let freq = count0 as f64 / cfg.num_walks as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn pooling_is_permutation_invariant() {
        let g = BipartiteGraph::from_pairs(&[(0, 0), (0, 1), (1, 0), (1, 2)], 2, 3).unwrap();
        let emb = table(
            &[&[0.3, -1.0], &[2.0, 0.5]],
            &[&[1.0, 1.5], &[-0.5, 0.25], &[4.0, -4.0]],
        );
        let cfg = WalkConfig {
            walk_len: 3,
            num_walks: 8,
            seed: 5,
        };
        let mut set = sample_walks(&g, Side::User, 0, &cfg).unwrap();
        let before = pool_layers(&set, &emb).unwrap();
        set.walks.reverse();
        set.walks.swap(0, 3);
        let after = pool_layers(&set, &emb).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooled_rows_stay_in_coordinate_hull() {
        let g =
            BipartiteGraph::from_pairs(&[(0, 0), (0, 1), (1, 1), (1, 2), (2, 0)], 3, 3).unwrap();
        let emb = table(
            &[&[0.1, -2.0], &[0.7, 3.0], &[-1.2, 0.4]],
            &[&[2.0, 0.0], &[-0.3, 1.1], &[0.9, -0.9]],
        );
        let cfg = WalkConfig {
            walk_len: 3,
            num_walks: 16,
            seed: 1,
        };
        for root in 0..3u32 {
            let set = sample_walks(&g, Side::User, root, &cfg).unwrap();
            let block = pool_layers(&set, &emb).unwrap();
            for k in 1..=cfg.walk_len {
                let side = set.side_at(k);
                for c in 0..2 {
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for idx in 0..3 {
                        let v = emb.row(side, idx).unwrap()[c];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    let v = block[k * 2 + c];
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn precompute_matches_per_node_calls() {
        let g = BipartiteGraph::from_pairs(&[(0, 0), (1, 0), (1, 1)], 2, 2).unwrap();
        let emb = table(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[0.5, 0.5], &[2.0, -2.0]]);
        let cfg = WalkConfig {
            walk_len: 3,
            num_walks: 4,
            seed: 77,
        };
        let reps = precompute_all(&g, &emb, &cfg, &[true, true], &[true, true]).unwrap();
        for side in [Side::User, Side::Item] {
            for idx in 0..2u32 {
                let set = sample_walks(&g, side, idx, &cfg).unwrap();
                let block = pool_layers(&set, &emb).unwrap();
                assert_eq!(reps.block(side, idx as usize).unwrap(), &block[..]);
            }
        }
    }

    #[test]
    fn parallel_and_single_thread_agree_bitwise() {
        let g = BipartiteGraph::from_pairs(&[(0, 0), (0, 1), (1, 1), (2, 0), (2, 1)], 3, 2).unwrap();
        let emb = table(
            &[&[0.25, 1.0], &[-1.0, 0.125], &[3.0, 0.5]],
            &[&[1.0, -1.0], &[0.0, 2.0]],
        );
        let cfg = WalkConfig {
            walk_len: 3,
            num_walks: 6,
            seed: 2,
        };
        let warm_u = vec![true; 3];
        let warm_i = vec![true; 2];
        let parallel = precompute_all(&g, &emb, &cfg, &warm_u, &warm_i).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| precompute_all(&g, &emb, &cfg, &warm_u, &warm_i))
            .unwrap();
        assert_eq!(parallel, single);
    }

    #[test]
    fn empty_warm_set_is_empty_store() {
        let g = BipartiteGraph::from_pairs(&[(0, 0)], 1, 1).unwrap();
        let emb = table(&[&[1.0]], &[&[2.0]]);
        let reps =
            precompute_all(&g, &emb, &WalkConfig::default(), &[false], &[false]).unwrap();
        assert_eq!(reps.present_count(), 0);
        assert!(reps.block(Side::User, 0).is_none());
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let g = BipartiteGraph::from_pairs(&[(0, 0)], 1, 1).unwrap();
        let users = SideEmbedding::zeros(1, 1); // no rows set
        let mut items = SideEmbedding::zeros(1, 1);
        items.set_row(0, &[1.0]).unwrap();
        let emb = EmbeddingTable { users, items };
        let err = precompute_all(&g, &emb, &WalkConfig::default(), &[true], &[true]).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { .. }));
    }

    #[test]
    fn cache_round_trip_is_identical() {
        let g = BipartiteGraph::from_pairs(&[(0, 0), (1, 0)], 2, 1).unwrap();
        let emb = table(&[&[1.5, 2.5], &[-0.5, 0.75]], &[&[3.0, -3.0]]);
        let cfg = WalkConfig {
            walk_len: 2,
            num_walks: 3,
            seed: 8,
        };
        let reps = precompute_all(&g, &emb, &cfg, &[true, false], &[true]).unwrap();
        let mut buf = Vec::new();
        reps.write_to(&mut buf).unwrap();
        let back = LayerReps::read_from(&mut &buf[..], "<mem>").unwrap();
        assert_eq!(reps, back);
    }
}
