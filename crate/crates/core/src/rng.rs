//! Named random sub-streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used across the crate.
pub mod streams {
    pub const OPTIMIZER_RESTARTS: &str = "optimizer-restarts";
    pub const SUBSAMPLING: &str = "subsampling";
    pub const SYNTHETIC: &str = "synthetic";
}

/// Returns a generator for the named sub-stream of `seed`.
///
/// Different names give independent streams; the same `(seed, name)` always
/// yields the same sequence.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
