//! Random variate helpers shared by the samplers.
//!
//! All stochastic routines take a caller-supplied [`Rng`]; the CLI seeds a
//! [`SparRng`] so that runs are reproducible bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};

pub use rand_chacha::ChaCha8Rng as SparRng;

pub fn rng_from_seed(seed: u64) -> SparRng {
    SparRng::seed_from_u64(seed)
}

/// Derives an independent child seed, e.g. one per bootstrap replicate.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// A Beta draw returned as `(z, 1 - z)`.
///
/// Both halves come from the two underlying Gamma variates, so `1 - z` keeps
/// full relative precision when `z` is close to one.
pub fn beta_pair<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> (f64, f64) {
    let x = gamma(alpha, rng);
    let y = gamma(beta, rng);
    let s = x + y;
    if s == 0.0 {
        // both shapes tiny enough to underflow; fall back on the mean
        let m = alpha / (alpha + beta);
        return (m, 1.0 - m);
    }
    (x / s, y / s)
}

fn gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0).expect("gamma shape must be positive and finite").sample(rng)
}

/// Uniform direction on `𝕊^{k-1}` written into `out` (normalised Gaussians).
pub fn unit_vector_into<R: Rng + ?Sized>(out: &mut [f64], rng: &mut R) {
    loop {
        let mut ss = 0.0;
        for v in out.iter_mut() {
            *v = standard_normal(rng);
            ss += *v * *v;
        }
        if ss > 0.0 {
            let inv = 1.0 / libm::sqrt(ss);
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Uniform sample of `count` directions on `𝕊^{d-1}`.
pub fn uniform_sphere<R: Rng + ?Sized>(d: usize, count: usize, rng: &mut R) -> crate::Matrix {
    let mut m = crate::Matrix::zeros(count, d);
    for i in 0..count {
        unit_vector_into(m.row_mut(i), rng);
    }
    m
}
