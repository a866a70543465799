//! Counter-derived random substreams.
//!
//! Trajectory `i` of an ensemble draws from its own generator seeded with
//! `derive_substream_seed(master, i)`, so what a trajectory sees depends
//! only on `(master, i)` and never on which worker ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. A bijection on `u64`.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `trajectory_index` under `master_seed`.
///
/// Injective in the index for a fixed master seed: the index is scaled by an
/// odd constant, offset by a key derived from the master seed and passed
/// through a bijective mixer.
pub fn derive_substream_seed(master_seed: u64, trajectory_index: u64) -> u64 {
    let key = mix64(master_seed ^ 0x6A09_E667_F3BC_C909);
    mix64(key.wrapping_add(trajectory_index.wrapping_mul(GOLDEN)))
}

pub type TrajectoryRng = ChaCha8Rng;

pub fn trajectory_rng(master_seed: u64, trajectory_index: u64) -> TrajectoryRng {
    ChaCha8Rng::seed_from_u64(derive_substream_seed(master_seed, trajectory_index))
}
