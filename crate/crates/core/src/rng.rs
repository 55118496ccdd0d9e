//! Seeded random streams.
//!
//! Every stochastic draw in the crate comes from a stream keyed by a root seed
//! and a path of integer coordinates (episode, batch item, agent, ...). Streams
//! never depend on scheduling, so serial and concurrent execution agree bit for
//! bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

/// Domain tags separating the stream families used by the different modules.
pub mod tag {
    pub const PGPSE: u64 = 1;
    pub const COLLECT: u64 = 2;
    pub const Q_LEARNING: u64 = 3;
    pub const EVALUATION: u64 = 4;
    pub const CONCENTRATION: u64 = 5;
    pub const FRANK_WOLFE: u64 = 6;
    pub const MIXTURE_ROLLOUT: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed from a root seed and a coordinate path.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &c| {
        splitmix64(acc.rotate_left(23) ^ splitmix64(c ^ 0xD6E8_FEB8_6659_FD93))
    })
}

/// Returns the stream for `(seed, path...)`.
pub fn stream(seed: u64, path: &[u64]) -> RngStream {
    RngStream::seed_from_u64(derive_seed(seed, path))
}
