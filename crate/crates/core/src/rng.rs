//! Seed derivation helpers.
//!
//! Every component that needs randomness receives its own ChaCha8 stream
//! seeded through [`derive_seed`], so the order in which components draw
//! never perturbs any other component. Derivation is a splitmix64 chain
//! over the base seed and a list of salts (step index, sample index,
//! episode index, and so on).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of salts into a new seed.
pub fn derive_seed(base: u64, salts: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &salt in salts {
        state = splitmix64(state ^ splitmix64(salt));
    }
    state
}

/// ChaCha8 stream for a derived seed.
pub fn derive_rng(base: u64, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, salts))
}
