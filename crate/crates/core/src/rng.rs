//! Counter-based random streams.
//!
//! A stream is identified by `(seed, stream_id)`; ChaCha8 keyed by the seed
//! with the stream id in its nonce word produces an independent sequence per
//! path, so a path's draws never depend on which thread simulated it or how
//! many paths ran before it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

pub struct PathRng {
    inner: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        PathRng { inner }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Poisson count with the given mean; zero for a non-positive mean.
    #[inline]
    pub fn poisson(&mut self, mean: f64) -> u32 {
        if mean <= 0.0 {
            return 0;
        }
        match Poisson::new(mean) {
            Ok(d) => {
                let k: f64 = d.sample(&mut self.inner);
                k as u32
            }
            Err(_) => 0,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }
}
