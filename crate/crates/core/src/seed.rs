//! Pure seed derivation: every random stream is a function of the master
//! seed, the pipeline stage, the epoch and an index, so reruns and partial
//! reruns draw identical numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Data = 1,
    Pretrain = 2,
    Init = 3,
    Plan = 4,
    Eval = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream for `(seed, stage, epoch, index)`.
pub fn stream_rng(seed: u64, stage: Stage, epoch: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed ^ splitmix(stage as u64)) ^ epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derived 64-bit seed, for APIs that take a plain seed.
pub fn derive_seed(seed: u64, stage: Stage, epoch: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(stage as u64)) ^ epoch)
}
