//! Seeded RNG helpers shared across modules.
//!
//! Every random stream in the pipeline is a ChaCha8 stream derived from the
//! master seed plus a purpose tag, so runs are reproducible and independent
//! stages never share a stream.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a purpose-specific stream from the master seed. `tag` is a fixed
/// per-purpose constant; `extra` distinguishes instances (epoch, node, ...).
pub(crate) fn stream(master: u64, tag: u64, extra: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&tag.to_le_bytes());
    seed[16..24].copy_from_slice(&extra.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Uniform index in `0..n` via the 64-bit multiply-shift reduction
/// `(next_u64 * n) >> 64`. The bias is below n * 2^-64 and the construction
/// is trivial to reproduce independently of any library internals.
pub(crate) fn uniform_index<R: RngCore>(rng: &mut R, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Fisher-Yates shuffle driven by `uniform_index`.
pub(crate) fn shuffle<T, R: RngCore>(v: &mut [T], rng: &mut R) {
    for i in (1..v.len()).rev() {
        let j = uniform_index(rng, i + 1);
        v.swap(i, j);
    }
}

/// Standard normal via Box-Muller; used for parameter initialization.
pub(crate) fn normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
