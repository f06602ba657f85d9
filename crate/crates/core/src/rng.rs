//! Counter-based random numbers.
//!
//! Every random quantity in the lab is derived from a 64-bit key by a
//! SplitMix64 stream. Site values are keyed by (seed, coordinates), Monte
//! Carlo replicas by (master seed, replica index). Streams are therefore
//! independent of worker count and can be regenerated site by site without
//! storing anything.

use rand::RngCore;

/// SplitMix64 finalizer. Bijective on u64 and passes BigCrush as the
/// increment-by-golden-gamma generator below.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key for the value stream of a single lattice site.
pub fn site_key(seed: u64, coords: &[i64]) -> u64 {
    let mut h = mix64(seed ^ 0x243f_6a88_85a3_08d3);
    for &c in coords {
        h = mix64(h ^ (c as u64));
    }
    h
}

/// Key for an indexed Monte Carlo replica.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed ^ 0x452a_f86c_13b5_8a6d) ^ index)
}

/// Minimal SplitMix64 generator. One site or replica owns one stream.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(key: u64) -> Self {
        SplitMix64 { state: key }
    }

    /// Next raw 64-bit output of the stream.
    #[inline]
    pub fn next_raw(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_raw() >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next_raw() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_raw()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut chunks = dest.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_raw().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let bytes = self.next_raw().to_le_bytes();
            rem.copy_from_slice(&bytes[..rem.len()]);
        }
    }
}
