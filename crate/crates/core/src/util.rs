//! Small deterministic hashing/mixing helpers shared across modules.
//!
//! Seeds derived here are stable across platforms and crate versions:
//! dropout masks, augmentation draws and epoch shuffles must reproduce
//! bit-identically from the run seed alone.

/// SplitMix64 finalizer. Good avalanche, stateless.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine two seeds into one stream key.
pub(crate) fn mix2(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b))
}

/// FNV-1a over bytes; used to fold string ids into seeds.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Uniform f64 in [0, 1) from a (seed, index) pair.
pub(crate) fn unit_f64(seed: u64, index: u64) -> f64 {
    let bits = mix64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    // 53 mantissa bits.
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
