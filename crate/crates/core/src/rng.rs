//! Seeded randomness shared by splitting, initialization, dropout and batching.
//!
//! Every stream is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) and every
//! permutation is a descending Fisher-Yates pass drawing `j` uniformly from
//! `0..=i` as a `u64`, so results do not depend on pointer width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose from a base seed.
pub fn substream(seed: u64, purpose: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub fn shuffle<T>(items: &mut [T], rng: &mut SeededRng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i as u64) as usize;
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_a_reproducible_permutation() {
        let mut a: Vec<u32> = (0..100).collect();
        let mut b = a.clone();
        shuffle(&mut a, &mut seeded(9));
        shuffle(&mut b, &mut seeded(9));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(a, sorted);
    }

    #[test]
    fn substreams_differ() {
        let x: u64 = substream(1, 0).random();
        let y: u64 = substream(1, 1).random();
        assert_ne!(x, y);
    }
}
