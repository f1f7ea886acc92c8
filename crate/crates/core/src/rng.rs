//! Portable random streams.
//!
//! The toy embedder uses [`SplitMix64`] seeded with [`fnv1a64`] of the token so
//! vectors are identical on every platform. Everything else draws from
//! ChaCha8 seeded through [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 (Steele, Lea and Flood constants).
#[derive(Debug, Clone)]
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

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Mixes a base seed with a textual stream tag into an independent seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut sm = SplitMix64::new(seed ^ fnv1a64(tag.as_bytes()));
    sm.next_u64()
}

pub fn rng_from(seed: u64, tag: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}
