//! Splittable seed derivation. Every source of randomness in the crate is a
//! ChaCha12 stream seeded through [`derive`]: a counter-based splitmix64 hash
//! of (parent seed, stream index). Derivations nest, so e.g. the rng for
//! sampling trees on client k in repetition r is
//! `derive(derive(derive(base, r), stream::SAMPLE), k)` — independent of
//! thread scheduling, which is what makes parallel runs reproduce serial ones.

/// Finalizer of the splitmix64 generator (Steele et al.); a high-quality
/// 64-bit mix with no fixed point at zero once offset by the golden gamma.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from (seed, stream counter).
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Named stream counters. Keeping them distinct (and documented) is what
/// guarantees e.g. the bootstrap rng never aliases the split rng.
pub mod stream {
    /// Per-tree bootstrap + feature sampling inside a forest.
    pub const TREE: u64 = 0x01;
    /// Train/test split of the full dataset.
    pub const SPLIT: u64 = 0x02;
    /// Dirichlet label-skew assignment.
    pub const SKEW: u64 = 0x03;
    /// Per-client validation split.
    pub const VALIDATION: u64 = 0x04;
    /// Per-client forest training.
    pub const CLIENT_TRAIN: u64 = 0x05;
    /// Server-side tree-quota assignment.
    pub const PLAN: u64 = 0x06;
    /// Per-client weighted tree sampling.
    pub const SAMPLE: u64 = 0x07;
    /// Global (pooled) forest training.
    pub const GLOBAL_TRAIN: u64 = 0x08;
    /// Synthetic dataset generation.
    pub const DATA: u64 = 0x09;
}
