//! Per-replicate random streams.
//!
//! Every replicate owns a private xoshiro256++ generator whose 64-bit seed is
//! `splitmix64(master ^ splitmix64(replicate + 1))`. The generator is then
//! expanded from that seed with SplitMix64, as `seed_from_u64` does. The
//! mapping is part of the reproducibility contract and is echoed in every
//! run manifest as [`RNG_ALGORITHM`].

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used by all samplers.
pub type SimRng = Xoshiro256PlusPlus;

pub const RNG_ALGORITHM: &str =
    "xoshiro256++; replicate seed = splitmix64(master ^ splitmix64(index + 1))";

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn replicate_seed(master: u64, replicate: u64) -> u64 {
    splitmix64(master ^ splitmix64(replicate.wrapping_add(1)))
}

pub fn replicate_rng(master: u64, replicate: u64) -> SimRng {
    SimRng::seed_from_u64(replicate_seed(master, replicate))
}

/// Derives an independent master seed for a named sub-experiment, so one
/// configured seed can drive several disjoint replicate families.
pub fn derive_master(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}
