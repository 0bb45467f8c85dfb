//! Portable 64-bit generator shared by the cipher and the data pipeline.

/// SplitMix64 as published by Steele, Lea and Flood (and used to seed the
/// xoshiro family). Output sequence is fixed so keys and seeds are portable.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }
}

impl Iterator for SplitMix64 {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        Some(self.next_u64())
    }
}

/// SplitMix64 output finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for a named stream.
///
/// Used to split one invocation seed into dataset, key, init and batching
/// streams without the streams overlapping.
pub fn sub_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix64(seed ^ GOLDEN_GAMMA);
    for b in stream.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ mix64(index.wrapping_add(GOLDEN_GAMMA)))
}
