//! Seeded random streams.
//!
//! Every run owns one 64-bit seed. Independent consumers draw from distinct
//! ChaCha8 streams of that seed (`set_stream`), so a consumer's values depend
//! only on `(seed, stream id)` and never on how many values other consumers
//! drew. Stream ids in use:
//!
//! | id                      | consumer                                        |
//! |-------------------------|-------------------------------------------------|
//! | 0                       | synthetic data: class means, then mixing layers |
//! | 1 + i                   | synthetic train image `i`                       |
//! | 2^32 + i                | synthetic eval image `i`                        |
//! | 2^40                    | backbone initialization                         |
//! | 2^40 + t                | CSS step `t`: head init, future rows, shuffles  |
//! | 2^41                    | every probe (same init whatever the step)       |
//!
//! Within a stream, normals come from `rand_distr::Normal` and uniform
//! integers from `Rng::random_range`; the draw order of each consumer is
//! documented where the draws happen.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

pub const DATA_STREAM: u64 = 0;
pub const TRAIN_IMAGE_BASE: u64 = 1;
pub const EVAL_IMAGE_BASE: u64 = 1 << 32;
pub const BACKBONE_INIT_STREAM: u64 = 1 << 40;
pub const STEP_STREAM_BASE: u64 = 1 << 40;
pub const PROBE_STREAM: u64 = 1 << 41;

/// A ChaCha8 stream addressed by `(seed, stream)`, counting its draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    position: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            position: 0,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of values drawn through this handle.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        self.position += 1;
        let dist = Normal::new(mean, std).expect("finite standard deviation");
        dist.sample(&mut self.inner)
    }

    pub fn normal_scalar<T: Scalar>(&mut self, mean: f64, std: f64) -> T {
        T::lit(self.normal(mean, std))
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.position += 1;
        self.inner.random_range(lo..=hi)
    }

    /// `true` with probability `p` (one uniform `[0, 1)` draw).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.position += 1;
        self.inner.random::<f64>() < p
    }

    /// Fisher-Yates shuffle using `range_inclusive` draws from the back.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.range_inclusive(0, i);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.inner.next_u64()
    }
}
