//! Seeded randomness shared by every stochastic step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-task.
pub fn derive(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw (Box–Muller, one value per call).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
        }
    }
}

/// Uniform draw from `[-bound, bound)`.
pub fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    let u: f64 = rng.random();
    (2.0 * u - 1.0) * bound
}
