//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every consumer of randomness derives its own generator from a master
//! seed plus a path of integer tags (replicate index, fold, purpose, ...),
//! so results never depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a tag path into a seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Generator for `seed`, independent stream `stream`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn from_path(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

// Purpose tags keep streams for different consumers apart.
pub(crate) const TAG_FOLDS: u64 = 1;
pub(crate) const TAG_NUISANCE: u64 = 2;
pub(crate) const TAG_BOOTSTRAP: u64 = 3;
pub(crate) const TAG_SIMULATION: u64 = 4;
pub(crate) const TAG_SELECTION: u64 = 5;
pub(crate) const TAG_RESAMPLE: u64 = 6;
pub(crate) const TAG_REPLICATE: u64 = 7;
