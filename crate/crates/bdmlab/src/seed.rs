//! Deterministic random streams.
//!
//! One root seed fully determines every output of the crate. Replicas,
//! spines, and other parallel units each get an independent generator whose
//! seed is derived from the root seed and the unit's index through SplitMix64,
//! so results are identical no matter how work is scheduled.
//!
//! Xoshiro256++ is the workhorse generator: the event loop consumes on the
//! order of 10^10 draws inside the acceptance-budgeted ensembles and a
//! cryptographic generator would dominate the runtime.

use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The pseudo-random generator used by all stochastic modules.
pub type Prng = Xoshiro256PlusPlus;

/// One SplitMix64 step: advances `state` and returns the next output.
///
/// Reference constants from Steele, Lea, Flood (2014); this is the same
/// mixer Xoshiro's own `seed_from_u64` uses, reimplemented here so stream
/// derivation is documented and independent of generator internals.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `index` from the root seed.
///
/// The root seed and index are mixed through two SplitMix64 steps; distinct
/// (root, index) pairs map to distinct, well-separated seeds.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut state = root;
    let a = splitmix64(&mut state);
    state = a ^ index.wrapping_mul(0xA076_1D64_78BD_642F);
    splitmix64(&mut state)
}

/// Builds the generator for stream `index` under `root`.
pub fn stream_rng(root: u64, index: u64) -> Prng {
    Prng::seed_from_u64(derive_seed(root, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn splitmix64_matches_reference_vector() {
        // First three outputs for seed 0, from the published reference code.
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(&mut s), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(splitmix64(&mut s), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a1: u64 = stream_rng(42, 0).random();
        let a2: u64 = stream_rng(42, 0).random();
        let b: u64 = stream_rng(42, 1).random();
        let c: u64 = stream_rng(43, 0).random();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert_ne!(a1, c);
    }

    #[test]
    fn nearby_roots_and_indices_do_not_collide() {
        let mut seen = std::collections::HashSet::new();
        for root in 0..32u64 {
            for index in 0..32u64 {
                assert!(seen.insert(derive_seed(root, index)));
            }
        }
    }
}
