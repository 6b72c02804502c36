//! Counter-addressed random streams.
//!
//! Every replica of an experiment owns a ChaCha8 stream keyed by a seed that
//! is mixed from `(master_seed, replica)`. Inside a stream, iteration `k`
//! reads from its own fixed window of the keystream, so the draws made at
//! iteration `k` never depend on how many numbers earlier iterations used.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each iteration owns `2^20` 32-bit words of keystream.
const WORDS_PER_ITERATION_SHIFT: u32 = 20;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Bijective on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `replica` under `master`: `mix64(master ^ mix64(replica + γ))`.
///
/// Neighbouring replica indices map to unrelated keys, so sequential seeds
/// are never handed to the generator.
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    mix64(master ^ mix64(replica.wrapping_add(GOLDEN_GAMMA)))
}

/// A ChaCha8 keystream addressed by iteration index.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn for_replica(master: u64, replica: u64) -> Self {
        Self::new(replica_seed(master, replica))
    }

    /// Moves to the start of the window reserved for `iteration`.
    pub fn seek(&mut self, iteration: u64) {
        self.rng
            .set_word_pos(u128::from(iteration) << WORDS_PER_ITERATION_SHIFT);
    }
}

impl RngCore for NoiseStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
