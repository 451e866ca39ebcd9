//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by an explicit seed, a domain tag and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream domains; keep values stable, they are part of the
/// reproducibility contract of generated datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Trajectory = 1,
    Channel = 2,
    Laser = 3,
    Init = 4,
    Pairs = 5,
    Shuffle = 6,
    Pso = 7,
    Diagnostic = 8,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed with a sub-index into a new, decorrelated seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, domain as u64));
    rng.set_stream(index);
    rng
}
