// SPDX-License-Identifier: MIT OR Apache-2.0

//! Keyed random substreams.
//!
//! Every random draw in the crate comes from a generator derived from a
//! master seed and a tuple of integer keys (purpose tag, interval bounds,
//! frequency index, replicate number, ...). Work items therefore own their
//! streams, and results do not depend on the order in which a thread pool
//! schedules them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags, mixed in as the first key so different consumers never
/// share a stream.
pub mod tag {
    pub const INTERVALS: u64 = 0x1;
    pub const DECOMP_INIT: u64 = 0x2;
    pub const BOOTSTRAP: u64 = 0x3;
    pub const SPARSITY: u64 = 0x4;
    pub const SEGMENT: u64 = 0x5;
    pub const FACTOR: u64 = 0x6;
    pub const REPLICATE: u64 = 0x7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit child seed from `seed` and `keys`.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Generator for the substream identified by `keys` under `seed`.
pub fn substream(seed: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, keys))
}
