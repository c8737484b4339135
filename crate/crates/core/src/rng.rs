//! Deterministic 64-bit PRNG used everywhere randomness is part of the
//! reproducibility contract (graph generation, activation schedules,
//! gradient noise).
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014), pinned here by
//! its update equations so the exact streams can be reproduced by any
//! other implementation:
//!
//! ```text
//! state ← state + 0x9E3779B97F4A7C15                 (mod 2^64)
//! z ← state
//! z ← (z ⊕ (z ≫ 30)) · 0xBF58476D1CE4E5B9            (mod 2^64)
//! z ← (z ⊕ (z ≫ 27)) · 0x94D049BB133111EB            (mod 2^64)
//! output ← z ⊕ (z ≫ 31)
//! ```
//!
//! Uniform doubles take the top 53 bits: `(output ≫ 11) · 2⁻⁵³ ∈ [0, 1)`.
//! Normal draws use the Box-Muller cosine branch on two fresh uniforms.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next 64-bit output word.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits of the next word.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via Box-Muller: `sqrt(-2 ln u₁) · cos(2π u₂)`,
    /// with `u₁` shifted into `(0, 1]` so the log is always finite. Each
    /// call consumes exactly two words, which keeps stream positions easy
    /// to reason about.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// The SplitMix64 finalizer (the `z` equations above).
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of tags.
///
/// Each tag is folded in as `seed ← mix(seed + GOLDEN_GAMMA + tag)`, so
/// `derive_seed(s, &[a, b])` differs from `derive_seed(s, &[b, a])` and
/// from `derive_seed(s, &[a])`. Used for hierarchical seeding
/// (run seed → iteration → worker) so that paired runs share noise
/// streams while schedules stay independent.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = base;
    for &t in tags {
        s = mix(s.wrapping_add(GOLDEN_GAMMA).wrapping_add(t));
    }
    s
}
