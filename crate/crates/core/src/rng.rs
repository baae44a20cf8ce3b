//! Seeded random number generation.
//!
//! Everything random in the pipeline draws from [`Rng`], a xoshiro256++
//! generator seeded through splitmix64. Workers that must be independent of
//! scheduling get their own stream from [`fork`].

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub use rand::seq::SliceRandom;
pub use rand::Rng as RngExt;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, index)`.
pub fn fork(seed: u64, index: u64) -> Rng {
    seeded(mix64(seed ^ mix64(index)))
}

/// Derives a sub-seed for a named pipeline stage.
pub fn derive(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(seed ^ h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(7);
        let mut b = seeded(7);
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn forks_differ() {
        let mut a = fork(1, 0);
        let mut b = fork(1, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
        assert_ne!(derive(3, "ae"), derive(3, "dnn"));
    }
}
