//! Portable, versioned random streams.
//!
//! All randomness flows through [`SeedStream`], a ChaCha8 keystream
//! (`rand_chacha` 0.9) seeded with a 64-bit value through
//! `SeedableRng::seed_from_u64`. Derived quantities are computed here rather
//! than through platform libraries so that draws reproduce bit-for-bit:
//!
//! * uniform `[0, 1)`: the top 53 bits of `next_u64`, scaled by `2^-53`;
//! * integer ranges: Lemire's multiply-shift with rejection;
//! * standard normals: Box–Muller on two uniforms, cosine branch only.
//!
//! Subsystem seeds are derived with [`derive_seed`], a SplitMix64 finalizer
//! over `master ^ tag_hash`, so adding one consumer never shifts another
//! consumer's stream. Algorithm version: [`RNG_VERSION`].

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const RNG_VERSION: &str = "chacha8-splitmix64-v1";

#[derive(Debug, Clone)]
pub struct SeedStream {
    inner: ChaCha8Rng,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`: midpoints of the 2^53 grid.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(-half_width, half_width)`.
    pub fn symmetric_open(&mut self, half_width: f64) -> f64 {
        half_width * (2.0 * self.uniform_open() - 1.0)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform on `{0, .., n-1}`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty integer range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform on the inclusive range `{lo, .., hi}`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty integer range");
        lo + self.below((hi - lo) as u64 + 1) as usize
    }

    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for the subsystem named `tag` under a master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ splitmix64(tag_hash(tag)))
}

/// Seed for the `index`-th member of a tagged family, e.g. one per epoch.
pub fn derive_seed_indexed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, tag) ^ splitmix64(index.wrapping_add(1)))
}
