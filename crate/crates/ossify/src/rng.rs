//! Seeded, counter-based random numbers.
//!
//! Everything stochastic in this crate (model sampling, patch draws) must be
//! bitwise-reproducible from a `u64` seed, across platforms and across runs.
//! Instead of a stateful generator we use a pure function of
//! `(seed, counter)`, so draw *k* of a sequence can be recomputed in
//! isolation and parallel consumers cannot perturb each other.
//!
//! The generator is the splitmix64 sequence evaluated at an arbitrary index:
//!
//! ```text
//! state(seed, k) = seed + (k + 1) · 0x9E3779B97F4A7C15          (mod 2⁶⁴)
//! mix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!         z ^= z >> 27; z *= 0x94D049BB133111EB;
//!         z ^= z >> 31
//! raw(seed, k) = mix(state(seed, k))
//! ```
//!
//! Uniform doubles take the top 53 bits of `raw` into `(0, 1]` (never zero,
//! so logarithms are safe), and Gaussian draws apply the Box–Muller
//! transform to two consecutive uniforms:
//!
//! ```text
//! u1 = unit(seed, 2k);  u2 = unit(seed, 2k + 1)
//! normal(seed, k) = sqrt(-2 ln u1) · cos(2π u2)
//! ```
//!
//! All operations are exactly specified IEEE-754 double arithmetic, so the
//! same `(seed, k)` yields the same bits everywhere.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw 64 uniform bits for draw `counter` of stream `seed`.
#[inline]
pub fn raw(seed: u64, counter: u64) -> u64 {
    mix(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform double in the half-open-from-below interval `(0, 1]`.
#[inline]
pub fn unit_open(seed: u64, counter: u64) -> f64 {
    // Top 53 bits, shifted into [1, 2^53], scaled by 2^-53.
    ((raw(seed, counter) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw `counter` of stream `seed` (Box–Muller).
#[inline]
pub fn normal(seed: u64, counter: u64) -> f64 {
    let u1 = unit_open(seed, 2 * counter);
    let u2 = unit_open(seed, 2 * counter + 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform integer in `[0, n)` via the multiply-shift reduction.
/// The modulo bias is at most n/2⁶⁴, far below anything observable.
#[inline]
pub fn uniform_below(seed: u64, counter: u64, n: usize) -> usize {
    debug_assert!(n > 0);
    ((raw(seed, counter) as u128 * n as u128) >> 64) as usize
}
