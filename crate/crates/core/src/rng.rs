//! Portable seeded random stream.
//!
//! All sampling goes through [`DetRng`], a ChaCha8 keystream seeded with
//! `rand_core`'s `seed_from_u64` expansion (PCG32 output words filling the
//! 32-byte key). The derived primitives are spelled out here so another
//! implementation can reproduce a plan word for word:
//!
//! * `next_u64`: the raw ChaCha8 output word.
//! * `below(n)`: rejection sampling. Draw `x = next_u64()`; reject while
//!   `x >= u64::MAX - (u64::MAX % n)`, then return `x % n`.
//! * `unit()`: `(next_u64() >> 11) as f64 * 2^-53`, uniform on `[0, 1)`.
//! * `shuffle`: Fisher-Yates from the back, `j = below(i + 1)` for
//!   `i = len-1 .. 1`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Index drawn from non-negative `weights` (need not be normalized).
    /// Returns `None` when every weight is zero.
    pub fn weighted(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let target = self.unit() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(i);
            if target < acc {
                return Some(i);
            }
        }
        last
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}
