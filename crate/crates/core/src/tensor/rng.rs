use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Scalar, Tensor};

/// Seeded, platform-independent random stream.
///
/// Backed by ChaCha8, a counter-based generator: the same seed yields the same
/// bits on every target. Independent sub-streams come from [`Rng::split`].
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream `stream` of the generator keyed by `seed`. Streams never overlap.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives a child generator and advances this one.
    pub fn split(&mut self) -> Rng {
        let seed = self.inner.next_u64();
        Rng::new(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

/// Normal samples with mean 0 and standard deviation `std`.
///
/// # Panics
/// If `std` is negative or not finite.
pub fn rand_normal<T: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    assert!(std >= 0.0 && std.is_finite(), "std must be finite and non-negative");
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    Tensor::from_fn(shape, |_| T::from_f64(rng.normal() * std))
}

/// Normal samples redrawn until they fall within two standard deviations.
pub fn trunc_normal<T: Scalar>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<T> {
    assert!(std >= 0.0 && std.is_finite(), "std must be finite and non-negative");
    Tensor::from_fn(shape, |_| loop {
        let z = rng.normal();
        if z.abs() <= 2.0 {
            break T::from_f64(z * std);
        }
    })
}

pub fn rand_uniform<T: Scalar>(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.uniform(lo, hi)))
}
