//! Deterministic randomness plumbing.
//!
//! Every random decision in the crate flows from a user-visible `u64` seed
//! through [`derive_rng`], which hashes the seed together with a list of
//! domain tags (model init vs. data sampling vs. per-item placement, ...).
//! Independent pipeline stages therefore draw from independent streams, and
//! inserting a new consumer never shifts the draws of an existing one.
//!
//! The concrete generator is ChaCha8: cheap, portable, and its full state can
//! be captured and restored exactly, which is what makes bitwise checkpoint
//! resume possible (see [`RngState`]).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Domain tags for the top-level pipeline stages.
///
/// Values are arbitrary but fixed forever; changing them changes every
/// downstream stream.
pub mod tags {
    pub const MODEL_INIT: u64 = 0x11;
    pub const DATASET: u64 = 0x22;
    pub const TRAIN_LOOP: u64 = 0x33;
    pub const EVAL: u64 = 0x44;
    pub const EXPERIMENT: u64 = 0x55;
    pub const SPLIT: u64 = 0x66;
    pub const CROP: u64 = 0x77;
    pub const FONT: u64 = 0x88;
}

/// One round of the splitmix64 output function.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 256-bit ChaCha seed from a base seed and a tag path.
///
/// The tag path is mixed in sequentially, so `[a, b]` and `[b, a]` produce
/// unrelated streams, as do prefixes of one another.
pub fn derive_seed_bytes(seed: u64, tag_path: &[u64]) -> [u8; 32] {
    let mut state = seed;
    // Absorb: one splitmix round per tag, xoring the tag into the state.
    let _ = splitmix64(&mut state);
    for &tag in tag_path {
        state ^= tag.wrapping_mul(0xd6e8_feb8_6659_fd93);
        let _ = splitmix64(&mut state);
    }
    // Squeeze 4 words.
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// Construct a ChaCha8 generator for `(seed, tag_path)`.
pub fn derive_rng(seed: u64, tag_path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed_bytes(seed, tag_path))
}

/// Derive a plain `u64` sub-seed for components that take a seed rather
/// than a generator (nested experiment stages, evaluation shards).
pub fn derive_seed(seed: u64, tag_path: &[u64]) -> u64 {
    let bytes = derive_seed_bytes(seed, tag_path);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// Full serializable state of a ChaCha8 generator.
///
/// Restoring this state reproduces the exact upcoming draw sequence, which is
/// what checkpoint resume relies on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos_lo: u64,
    pub word_pos_hi: u64,
}

impl RngState {
    /// Capture the current state of a generator.
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let word_pos = rng.get_word_pos();
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_lo: word_pos as u64,
            word_pos_hi: (word_pos >> 64) as u64,
        }
    }

    /// Rebuild a generator in exactly this state.
    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_streams_are_stable() {
        // Frozen expectations: these must never change across releases, or
        // every seeded artifact changes with them.
        let bytes = derive_seed_bytes(42, &[tags::DATASET, 7]);
        let again = derive_seed_bytes(42, &[tags::DATASET, 7]);
        assert_eq!(bytes, again);
        let mut rng = derive_rng(42, &[tags::DATASET, 7]);
        let first: u64 = rng.random();
        let mut rng2 = derive_rng(42, &[tags::DATASET, 7]);
        assert_eq!(first, rng2.random::<u64>());
    }

    #[test]
    fn tag_paths_are_order_sensitive() {
        assert_ne!(
            derive_seed_bytes(1, &[2, 3]),
            derive_seed_bytes(1, &[3, 2]),
            "tag order must matter"
        );
        assert_ne!(derive_seed_bytes(1, &[2]), derive_seed_bytes(1, &[2, 2]));
        assert_ne!(derive_seed_bytes(1, &[]), derive_seed_bytes(2, &[]));
    }

    #[test]
    fn rng_state_roundtrip_preserves_draws() {
        let mut rng = derive_rng(9, &[tags::TRAIN_LOOP]);
        // Advance to a position that does not fall on a block boundary.
        for _ in 0..13 {
            let _: u32 = rng.random();
        }
        let state = RngState::capture(&rng);
        let expected: Vec<u64> = (0..32).map(|_| rng.random()).collect();
        let mut restored = state.restore();
        let got: Vec<u64> = (0..32).map(|_| restored.random()).collect();
        assert_eq!(expected, got);
    }
}
