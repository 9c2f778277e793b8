//! Deterministic seed derivation for independent RNG streams.

/// Derives an independent sub-seed from a master seed and a stream index.
///
/// Uses the splitmix64 finalizer so that nearby indices yield unrelated
/// seeds. Used for per-trial and per-probe streams; per-ray streams use the
/// ChaCha stream counter instead.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
