//! Reproducible random streams.
//!
//! Every Monte Carlo task draws from its own ChaCha8 stream, addressed by a
//! `(seed, task, purpose)` triple. ChaCha is counter based, so a stream is a
//! pure function of its address and results do not depend on how tasks are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// What a stream is used for. Keeping purposes apart means that e.g. the
/// measurement-diffusion draws never perturb the sampler's own noise sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Sampler = 0,
    MeasurementDiffusion = 1,
    MeasurementNoise = 2,
    Phantom = 3,
    Training = 4,
    Init = 5,
}

const PURPOSES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed(pub u64);

impl StreamSeed {
    pub fn stream(self, task: u64, purpose: Purpose) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(task.wrapping_mul(PURPOSES).wrapping_add(purpose as u64));
        rng
    }

    /// Derives an independent seed for a sub-experiment, e.g. one test image.
    pub fn child(self, index: u64) -> StreamSeed {
        StreamSeed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}
