//! Deterministic RNG stream derivation.
//!
//! Every random quantity in the engine flows from one root seed. Subordinate
//! streams are derived by stably hashing `(seed, purpose label, index)` into
//! a 256-bit ChaCha key, so adding or reordering consumers never perturbs
//! unrelated streams, and parallel and serial execution see identical draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a 32-byte ChaCha key from `(seed, label, index)`.
pub fn derive_key(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut state = seed ^ fnv1a(label.as_bytes()).rotate_left(17) ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// A ChaCha stream for one purpose, e.g. `derive_rng(seed, "chain", 2)`.
pub fn derive_rng(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_key(seed, label, index))
}
