//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so any sample
//! of any path can be recomputed in isolation and parallel evaluation order
//! never changes a result.  The hash is three rounds of the SplitMix64
//! finalizer over the key words.

use core::f64::consts::PI;

use crate::math::{cos, ln, sqrt};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const K_STREAM: u64 = 0xd1b5_4a32_d192_ed03;
const K_COUNTER: u64 = 0xaef1_7502_108e_f2d9;

/// Streams reserved by this crate.  Distinct purposes never share a stream.
pub mod stream {
    pub const INCREMENTS: u64 = 0;
    pub const BRIDGE: u64 = 1;
    pub const SAMPLE_SEED: u64 = 2;
    pub const AUX: u64 = 3;
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn hash(seed: u64, stream: u64, counter: u64) -> u64 {
    let a = mix64(seed);
    let b = mix64(a ^ stream.wrapping_mul(K_STREAM));
    mix64(b ^ counter.wrapping_mul(K_COUNTER))
}

/// Uniform on the open interval `(0, 1)` with 53-bit resolution.
#[inline]
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    ((hash(seed, stream, counter) >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal draw number `counter` on `(seed, stream)` (Box–Muller,
/// cosine branch, consuming counters `2c` and `2c + 1`).
#[inline]
pub fn normal(seed: u64, stream: u64, counter: u64) -> f64 {
    let u1 = uniform(seed, stream, counter.wrapping_mul(2));
    let u2 = uniform(seed, stream, counter.wrapping_mul(2).wrapping_add(1));
    sqrt(-2.0 * ln(u1)) * cos(2.0 * PI * u2)
}

/// Per-sample seed derived from a master seed and a sample index.
#[inline]
pub fn sample_seed(master: u64, index: u64) -> u64 {
    hash(master, stream::SAMPLE_SEED, index)
}

/// Sequential view over one `(seed, stream)` pair, for code that just
/// needs "the next" draw.  Still positional: draw `k` is always the same.
#[derive(Debug, Clone)]
pub struct CounterStream {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl CounterStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream, counter: 0 }
    }

    pub fn next_normal(&mut self) -> f64 {
        let z = normal(self.seed, self.stream, self.counter);
        self.counter += 1;
        z
    }

    pub fn next_uniform(&mut self) -> f64 {
        // Offset keeps uniform and normal counters from overlapping.
        let u = uniform(self.seed, self.stream ^ 0x5555_5555, self.counter);
        self.counter += 1;
        u
    }
}
