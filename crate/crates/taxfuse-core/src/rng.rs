//! Minimal portable PRNG.
//!
//! SplitMix64 (Steele, Lea, Flood 2014). Chosen over an external RNG crate
//! because scene generation, mask jitter, and embedding noise must reproduce
//! bit-exactly from a seed across platforms and crate upgrades; the whole
//! generator is three constants and fits in a page. Not cryptographic.

/// SplitMix64 stream. Identical output for identical seeds, forever.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derives an independent stream from a seed and a list of u64 keys.
    /// Used to give each (scene, region, pixel) its own reproducible draw.
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        let mut mix = Self::new(seed);
        let mut state = mix.next_u64();
        for &k in keys {
            let mut sub = Self::new(state ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            state = sub.next_u64();
        }
        mix.state = state;
        mix
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi)`. Panics when the range is empty.
    /// Modulo bias is irrelevant at the range sizes used here (< 2^32).
    pub fn range_u32(&mut self, lo: u32, hi: u32) -> u32 {
        assert!(lo < hi, "empty range");
        lo + (self.next_u64() % u64::from(hi - lo)) as u32
    }

    /// Uniform integer in `[lo, hi]` inclusive, signed.
    pub fn range_i32(&mut self, lo: i32, hi: i32) -> i32 {
        assert!(lo <= hi, "empty range");
        let span = (hi as i64 - lo as i64 + 1) as u64;
        lo + (self.next_u64() % span) as i32
    }

    /// True with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Picks one element of a non-empty slice.
    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        assert!(!items.is_empty(), "pick from empty slice");
        &items[(self.next_u64() % items.len() as u64) as usize]
    }
}

/// FNV-1a over bytes, for hashing strings into u64 stream keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
