//! Seed discipline: named, independent random streams derived from one
//! run seed.
//!
//! Parameter init, batch shuffling, and the simulator each draw from their
//! own stream, so changing how one consumer uses randomness cannot perturb
//! the others. Sub-seeds (per scene, per poke, per epoch) are derived with
//! a splitmix64 mix, which is also stable across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    /// Parameter initialization.
    Init,
    /// Batch / split shuffling.
    Shuffle,
    /// Scene geometry and materials.
    Scene,
    /// Sensor noise.
    Sensor,
    /// Poke point, outcome, and label noise.
    Poke,
}

impl StreamId {
    fn tag(self) -> u64 {
        match self {
            StreamId::Init => 0x494e4954,
            StreamId::Shuffle => 0x53485546,
            StreamId::Scene => 0x5343454e,
            StreamId::Sensor => 0x534e5352,
            StreamId::Poke => 0x504f4b45,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed, e.g. per scene index or per epoch.
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut state = seed ^ index.wrapping_mul(0xd6e8feb86659fd93);
    splitmix64(&mut state)
}

/// Deterministic generator for one named stream of a seed.
pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut state = seed ^ id.tag().wrapping_mul(0xa076_1d64_78bd_642f);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
