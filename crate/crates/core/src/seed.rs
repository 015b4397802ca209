//! Derivation of independent RNG streams from one master seed.

/// Mixes `(seed, index)` into a new 64-bit seed with the SplitMix64 finalizer.
pub fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for a named purpose, so unrelated consumers never share a stream.
pub fn salted(seed: u64, salt: &str, index: u64) -> u64 {
    let tag = salt.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3));
    stream_seed(seed ^ tag, index)
}
