//! Per-path random streams.
//!
//! Each path owns an independent generator seeded from a hash of
//! `(seed, path)`, so results do not depend on how paths are scheduled.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64Mcg;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_seed(seed: u64, path: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(path.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// Standard normal stream for one path.
pub struct PathRng(Pcg64Mcg);

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        Self(Pcg64Mcg::seed_from_u64(path_seed(seed, path)))
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }
}
