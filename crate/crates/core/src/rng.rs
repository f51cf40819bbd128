//! Seeded random sources shared by every sampler in the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task from a base seed.
pub fn derive(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform point in the closed unit ball of R^d.
pub fn uniform_ball(rng: &mut Rng, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    uniform_ball_into(rng, &mut v);
    v
}

pub fn uniform_ball_into(rng: &mut Rng, out: &mut [f64]) {
    let d = out.len();
    loop {
        let mut s = 0.0;
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o = z;
            s += z * z;
        }
        if s > 0.0 {
            let u: f64 = rand::Rng::random(rng);
            let scale = u.powf(1.0 / d as f64) / s.sqrt();
            for o in out.iter_mut() {
                *o *= scale;
            }
            return;
        }
    }
}

/// Gaussian sample N(center, sigma^2 I).
pub fn gaussian_into(rng: &mut Rng, center: &[f64], sigma: f64, out: &mut [f64]) {
    for (o, c) in out.iter_mut().zip(center) {
        let z: f64 = StandardNormal.sample(rng);
        *o = c + sigma * z;
    }
}

/// Radical-inverse (Halton) sequence point `index` in [0,1)^d.
pub fn halton(index: u64, d: usize) -> Vec<f64> {
    const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    (0..d)
        .map(|k| {
            let base = PRIMES[k % PRIMES.len()];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}
