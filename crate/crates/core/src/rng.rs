//! Counter-based pseudo-random stream.
//!
//! Every random draw in the simulator goes through [`RandomStream`], a
//! SplitMix64 generator written in counter form: the `c`-th output of a
//! stream with key `k` is `mix64(k + c * 0x9E3779B97F4A7C15)` for
//! `c = 1, 2, ...`, where `mix64` is the SplitMix64 finalizer. The samplers
//! below are equally pinned so that a fixture generated here can be
//! regenerated bit-for-bit by any other implementation:
//!
//! * uniform `[0, 1)`: top 53 bits of one output times `2^-53`;
//! * normal: Box–Muller, cosine branch only, two outputs per draw
//!   (`u1` in `(0, 1]`, then `u2` in `[0, 1)`);
//! * index in `[0, n)`: rejection on the largest multiple of `n` below
//!   `2^64`, then `r % n`;
//! * permutation: Fisher–Yates from the last position down;
//! * Poisson: Knuth's product method on chunks of mean at most 16.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const POISSON_CHUNK: f64 = 16.0;

/// Named substreams derived from a run seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const TIMING: u64 = 2;
    pub const STRATEGY: u64 = 3;
    pub const GRADIENT: u64 = 4;
}

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    key: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed),
            counter: 0,
        }
    }

    /// Independent child stream; depends only on this stream's key and `tag`,
    /// not on how many values have been drawn.
    pub fn fork(&self, tag: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(tag.wrapping_mul(GOLDEN))),
            counter: 0,
        }
    }

    /// Number of 64-bit outputs consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal with the given mean and *variance*.
    pub fn normal(&mut self, mean: f64, variance: f64) -> f64 {
        mean + variance.sqrt() * self.standard_normal()
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let r = self.next_u64();
            if r <= zone {
                return (r % n) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices from `[0, n)`, in draw order (partial Fisher–Yates
    /// over the first `k` positions).
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut p: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            p.swap(i, j);
        }
        p.truncate(k);
        p
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let mut remaining = mean;
        let mut total = 0;
        while remaining > 0.0 {
            let lam = remaining.min(POISSON_CHUNK);
            remaining -= lam;
            let limit = (-lam).exp();
            let mut product = self.uniform_open();
            while product > limit {
                total += 1;
                product *= self.uniform_open();
            }
        }
        total
    }
}
