//! Explicitly seeded, counter-based random streams.
//!
//! Every consumer derives its own ChaCha8 stream from a root seed plus a
//! path of integer labels, so draws never depend on call order elsewhere
//! in the program. There is no global generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a label path into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// A generator for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_key(seed, path))
}

/// Stable 64-bit FNV-1a hash for strings used as stream labels.
pub fn label(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform draw in `[0, 1)` that depends only on `(seed, path)`.
pub fn uniform_at(seed: u64, path: &[u64]) -> f64 {
    (derive_key(seed, path) >> 11) as f64 / (1u64 << 53) as f64
}
