//! Seeded randomness primitives shared across the crate.
//!
//! Everything random in the engine goes through ChaCha20 streams seeded
//! from explicit 64-bit seeds, with child seeds derived by a SplitMix64
//! counter scheme. The same (seed, call sequence) always produces the
//! same bits on every platform, which is what the split files and report
//! bundles rely on for byte-identical reproduction.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Deterministic RNG used throughout the engine.
pub type EngineRng = ChaCha20Rng;

/// Algorithm name recorded in files that embed a seed, so a reader can
/// tell whether another implementation can replay the stream.
pub const PRNG_NAME: &str = "chacha20";

/// Create a ChaCha20 stream from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> EngineRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derive an independent child seed from a master seed and a counter.
///
/// SplitMix64 finalizer applied to `master + (index + 1) * GOLDEN_GAMMA`.
/// Child streams for distinct indices are statistically independent, and
/// index 0 never aliases the master stream itself.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut z = master.wrapping_add((index.wrapping_add(1)).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unbiased uniform integer in `[0, bound)` by rejection from 64-bit draws.
///
/// Rejects draws from the incomplete final cycle of `2^64 mod bound`, so
/// every residue is equally likely.
pub fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below requires a positive bound");
    // 2^64 mod bound, computed without overflow.
    let residue = (u64::MAX % bound + 1) % bound;
    let threshold = u64::MAX - residue;
    loop {
        let x = rng.next_u64();
        if residue == 0 || x <= threshold {
            return x % bound;
        }
    }
}

/// Uniform f64 in `[0, 1)` with 53 random mantissa bits.
pub fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw via the Box-Muller transform.
///
/// Uses the cosine branch only; one uniform pair per draw. Slightly
/// wasteful but stateless, which keeps parallel call sites independent.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // Guard against ln(0).
    let u1 = (1.0 - uniform_f64(rng)).max(f64::MIN_POSITIVE);
    let u2 = uniform_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Select the first `k` items of a slice by partial Fisher-Yates shuffle.
///
/// After the call, `items[..k]` holds the selection in draw order and
/// `items[k..]` the unselected remainder in an unspecified order.
pub fn fisher_yates_select<T>(items: &mut [T], k: usize, rng: &mut impl RngCore) {
    assert!(k <= items.len());
    for i in 0..k {
        let j = i + uniform_below(rng, (items.len() - i) as u64) as usize;
        items.swap(i, j);
    }
}

/// Full Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    let n = items.len();
    if n > 1 {
        fisher_yates_select(items, n - 1, rng);
    }
}
