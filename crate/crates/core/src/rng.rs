//! Seed derivation and serializable RNG state.
//!
//! Every random draw in the crate flows through a ChaCha8 stream derived
//! from the master seed by a counter-based split: the same master seed and
//! stream id always reproduce the same sequence, independent of how many
//! other streams exist. That is what makes parallel and sequential rollout
//! collection interchangeable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream ids: keep these distinct so subsystems never share a sequence.
pub const STREAM_PARAM_INIT: u64 = 1;
pub const STREAM_UPDATE: u64 = 2;
pub const STREAM_EVAL_BASE: u64 = 10_000;
/// Per-world streams are `STREAM_WORLD_BASE + stage * STAGE_STRIDE + world_index`.
pub const STREAM_WORLD_BASE: u64 = 100_000;
pub const STAGE_STRIDE: u64 = 10_000;

/// A ChaCha8 stream for (master seed, stream id).
pub fn derive_stream(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

pub fn world_stream(master_seed: u64, stage_index: u64, world_index: u64) -> ChaCha8Rng {
    derive_stream(
        master_seed,
        STREAM_WORLD_BASE + stage_index * STAGE_STRIDE + world_index,
    )
}

/// Full serializable state of a ChaCha8 stream; restoring it resumes the
/// sequence exactly where it left off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position split into (hi, lo) halves.
    pub word_pos: [u64; 2],
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: [(pos >> 64) as u64, pos as u64],
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos[0] as u128) << 64) | self.word_pos[1] as u128);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = derive_stream(7, 100);
        let mut b = derive_stream(7, 101);
        let mut a2 = derive_stream(7, 100);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        assert_ne!(xa, xb);
        assert_eq!(xa, a2.random::<u64>());
    }

    #[test]
    fn capture_restore_resumes_sequence() {
        let mut rng = derive_stream(42, 3);
        let _skip: [u64; 5] = rng.random();
        let state = RngState::capture(&rng);
        let expected: u64 = rng.clone().random();
        let mut restored = state.restore();
        assert_eq!(restored.random::<u64>(), expected);
        // Round-trips through capture unchanged.
        assert_eq!(RngState::capture(&state.restore()), state);
    }
}
