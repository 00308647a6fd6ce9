//! Deterministic random-number substreams.
//!
//! Every stochastic routine in this crate derives its generator from a caller
//! seed through [`substream_rng`], which mixes `(master, domain, index)` into
//! a single 64-bit seed with splitmix64 finalization. Because substream seeds
//! depend only on those three integers, results are reproducible bit-for-bit
//! regardless of thread count or evaluation order: parallel loops seed each
//! iteration independently instead of sharing a sequential stream.
//!
//! ChaCha8 is used as the generator proper: it is counter-based, portable, and
//! its output for a given seed is identical on all platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer: bijective avalanche mixing of a 64-bit word.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a substream seed from a master seed, a domain tag, and an index.
///
/// Distinct `(domain, index)` pairs yield (with overwhelming probability)
/// unrelated streams for the same master seed.
pub fn substream_seed(master: u64, domain: u64, index: u64) -> u64 {
    let a = mix64(master ^ mix64(domain));
    mix64(a ^ mix64(index))
}

/// ChaCha8 generator for the given substream.
pub fn substream_rng(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, domain, index))
}

/// Domain tag: path increments.
pub const DOMAIN_PATH: u64 = 1;
/// Domain tag: stationary initial draw.
pub const DOMAIN_INIT: u64 = 2;
/// Domain tag: limit-process Monte Carlo replicates.
pub const DOMAIN_BRIDGE: u64 = 3;
/// Domain tag: experiment replicate scenarios.
pub const DOMAIN_EXPERIMENT: u64 = 4;
