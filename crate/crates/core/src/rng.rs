//! Deterministic random streams.
//!
//! The generator is xoshiro256** seeded by expanding the 64-bit seed through
//! SplitMix64 (the `seed_from_u64` expansion of `rand_xoshiro`). Uniforms use
//! the top 53 bits of each output. Standard normals come from the Box–Muller
//! transform: each pair of uniforms yields a cosine and a sine variate, and
//! both are returned in that order before the next pair is drawn.
//!
//! Sub-streams (per epoch, per batch, per datapoint) are keyed with
//! [`Seed::derive`], which folds each key into the seed with the SplitMix64
//! finaliser.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    /// A seed for an independent sub-stream identified by `keys`.
    pub fn derive(self, keys: &[u64]) -> Seed {
        let mut h = splitmix64(self.0);
        for &k in keys {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        Seed(h)
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

impl Rng {
    pub fn new(seed: Seed) -> Self {
        Rng {
            inner: Xoshiro256StarStar::seed_from_u64(seed.0),
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Uniform on `(0, 1]`, safe to take the log of.
    fn uniform_open_zero(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * INV_2_53
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open_zero();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform integer in `0..n` by multiply-high reduction. `n` must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Index drawn from unnormalised non-negative `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = k;
                acc += w;
                if u < acc {
                    return k;
                }
            }
        }
        last_positive
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
