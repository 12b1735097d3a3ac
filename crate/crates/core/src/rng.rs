//! Seeded randomness.
//!
//! Every random choice in the crate flows through a ChaCha8 generator seeded
//! explicitly, so all outputs are reproducible bit-for-bit across platforms.
//! Parallel work derives one independent seed per item with [`derive_seed`]
//! instead of sharing a generator, which keeps results independent of
//! scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Builds the crate-standard seeded generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent per-item seed from a master seed (splitmix64 mix).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sample of `count` indices out of `0..total`, without replacement,
/// returned sorted. Partial Fisher-Yates on the index vector.
pub fn choose_indices(seed: u64, total: usize, count: usize) -> Vec<usize> {
    use rand::Rng;
    let count = count.min(total);
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = seeded_rng(seed);
    for i in 0..count {
        let j = rng.random_range(i..total);
        indices.swap(i, j);
    }
    let mut chosen = indices[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..8).map(|_| seeded_rng(7).random()).collect();
        let b: Vec<u64> = {
            let mut rng = seeded_rng(7);
            (0..8).map(|_| rng.random()).collect()
        };
        // First draw agrees; full streams agree when drawn from one generator.
        assert_eq!(a[0], b[0]);
        let c: Vec<u64> = {
            let mut rng = seeded_rng(7);
            (0..8).map(|_| rng.random()).collect()
        };
        assert_eq!(b, c);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let seeds: Vec<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
        assert_ne!(derive_seed(42, 0), derive_seed(43, 0));
    }
}
