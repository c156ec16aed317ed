//! Deterministic random substreams.
//!
//! Every stochastic routine takes a `u64` seed; sub-tasks derive their own seeds
//! with [`derive`], so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(seed, tag, index)`.
#[inline]
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(tag)).wrapping_add(index))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, tag: u64, index: u64) -> Stream {
    stream(derive(seed, tag, index))
}

/// Fill `out` with i.i.d. N(0, sd²) draws.
#[inline]
pub fn fill_gaussian(rng: &mut Stream, sd: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sd * z;
    }
}

pub fn gaussian_vec(rng: &mut Stream, sd: f64, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    fill_gaussian(rng, sd, &mut v);
    v
}

/// Tags used to separate substream families.
pub mod tags {
    pub const XI: u64 = 1;
    pub const ORACLE: u64 = 2;
    pub const REPLICA: u64 = 3;
    pub const LEVEL: u64 = 4;
    pub const ITER: u64 = 5;
    pub const INDEX: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const GEOM: u64 = 8;
    pub const STAGE: u64 = 9;
    pub const PHASE: u64 = 10;
    pub const DATA: u64 = 11;
    pub const SEED: u64 = 12;
    pub const PROBE: u64 = 13;
}
