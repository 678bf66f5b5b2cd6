//! Seeded random streams.
//!
//! Every stochastic job (one denoiser training, one rollout, one arm pull)
//! draws from its own ChaCha stream derived from a root seed and a job key.
//! Results therefore do not depend on how jobs are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Root generator for a run.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for job `key` under `seed`.
pub fn derive(seed: u64, key: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(key)));
    rng.set_stream(key);
    rng
}

/// Two-level key, e.g. (iteration, rollout).
pub fn derive2(seed: u64, a: u64, b: u64) -> Rng {
    derive(splitmix64(seed.wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))), b)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
