//! Deterministic seed derivation.
//!
//! Every random draw in a run is taken from a stream whose seed is a pure
//! function of the run seed and the coordinates of the draw (iteration, task,
//! episode, step, ...). Parallel workers therefore produce the same values no
//! matter how episodes are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep independent streams apart.
pub mod domain {
    pub const TRAIN_SCENE: u64 = 0x5452_4149;
    pub const EVAL_SCENE: u64 = 0x4556_414c;
    pub const ACTOR: u64 = 0x4143_544f;
    pub const CRITIC: u64 = 0x4352_4954;
    pub const AUGMENT: u64 = 0x4155_474d;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const PLACEMENT: u64 = 0x504c_4143;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` with SplitMix64 finalisation.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Hashes a string into a seed component (FNV-1a, stable across platforms).
pub fn text(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}
