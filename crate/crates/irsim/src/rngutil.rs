//! Deterministic RNG stream derivation.
//!
//! Every randomized component gets its own ChaCha8 stream whose seed is
//! derived from the scenario master seed and a stable stream index via
//! splitmix64. Streams therefore never share state, and adding a robot or
//! reordering event handling cannot perturb another robot's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The splitmix64 output function applied to `seed + index * GOLDEN_GAMMA`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha8 stream for the given master seed and stream index.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// Stream index for robot-local randomness.
pub fn robot_stream(robot_id: usize) -> u64 {
    1 + robot_id as u64
}

/// Stream index for engine-level randomness (placement, ambient draws).
pub const ENGINE_STREAM: u64 = 0;
