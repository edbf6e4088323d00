//! Deterministic, keyed random streams.
//!
//! Every stochastic step in the simulator draws from a stream identified by a
//! base seed plus a key path (client id, round, step, ...). Streams never
//! depend on execution order, so clients can be processed concurrently or in
//! any permutation without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the stream for `seed` and `key`. Distinct keys give independent streams.
pub fn stream(seed: u64, key: &[u64]) -> SimRng {
    let mut h = splitmix64(seed);
    for &k in key {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn keyed_streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2, 3]).random();
        let b: u64 = stream(7, &[1, 2, 3]).random();
        let c: u64 = stream(7, &[1, 3, 2]).random();
        let d: u64 = stream(8, &[1, 2, 3]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
