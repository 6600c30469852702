//! Portable seeded generator used by the simulator.
//!
//! SplitMix64: the state advances by the additive constant
//! `0x9E3779B97F4A7C15` (a 64-bit Weyl sequence) and each output is the
//! state passed through the variant-13 finalizer. Range draws use plain
//! modulo reduction, so a given seed yields the same trace on every
//! implementation that follows these rules.
//!
//! Test vectors (first four outputs):
//!
//! | seed      | outputs                                                                        |
//! |-----------|--------------------------------------------------------------------------------|
//! | 0         | 16294208416658607535 7960286522194355700 487617019471545679 17909611376780542444 |
//! | 1234567   | 6457827717110365317 3203168211198807973 9817491932198370423 4593380528125082431  |

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw from the inclusive range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range");
        let span = hi - lo;
        if span == u64::MAX {
            return self.next_u64();
        }
        lo + self.next_u64() % (span + 1)
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli trial with success probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range_inclusive(0, i as u64) as usize;
            items.swap(i, j);
        }
    }
}
