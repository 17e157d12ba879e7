//! Seeded sampling.
//!
//! All randomness comes from ChaCha8 seeded with a `u64` (`rand_chacha`), and
//! only uniform `f64` draws in `[0, 1)` are consumed. Ball samples use
//! rejection from the cube `[-1, 1]^n`, so the draw sequence is easy to
//! reproduce in another implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Vector;

pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn in_box(&mut self, dim: usize, lo: f64, hi: f64) -> Vector {
        Vector::from_iterator(dim, (0..dim).map(|_| self.uniform(lo, hi)))
    }

    /// Uniform point of the closed Euclidean unit ball.
    pub fn in_unit_ball(&mut self, dim: usize) -> Vector {
        loop {
            let z = self.in_box(dim, -1.0, 1.0);
            if z.norm_squared() <= 1.0 {
                return z;
            }
        }
    }

    /// Uniform point of the Euclidean unit sphere (rejection, then normalise).
    pub fn on_unit_sphere(&mut self, dim: usize) -> Vector {
        loop {
            let z = self.in_unit_ball(dim);
            let n = z.norm();
            if n > 1e-3 {
                return z / n;
            }
        }
    }
}
