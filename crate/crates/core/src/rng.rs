//! Pinned random number generation.
//!
//! Every random draw in this crate comes from a ChaCha8 stream whose
//! 256-bit key is derived from `(seed, tag, a, b)` by a splitmix64 chain.
//! The scheme is fixed here once: ChaCha8 (IETF variant as implemented by
//! `rand_chacha 0.3`, zero nonce/stream) keyed by the four little-endian
//! words `k0 = sm(seed)`, `k1 = sm(k0 ^ tag)`, `k2 = sm(k1 ^ a)`,
//! `k3 = sm(k2 ^ b)`, where `sm` is one splitmix64 step. Seeds are
//! therefore portable across platforms and releases, and distinct
//! `(tag, a, b)` coordinates give independent streams, so cells of a
//! matrix can be sampled in any order — or in parallel — with identical
//! results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream tags; one per independent consumer of randomness.
pub const TAG_MASK: u64 = 0x4d41534b; // "MASK"
pub const TAG_POISSON: u64 = 0x504f4953; // "POIS"
pub const TAG_MULTINOMIAL: u64 = 0x4d554c54; // "MULT"
pub const TAG_ROW_MULTINOMIAL: u64 = 0x524f5753; // "ROWS"
pub const TAG_TRUTH: u64 = 0x54525554; // "TRUT"
pub const TAG_TRIAL: u64 = 0x5452494c; // "TRIL"
pub const TAG_PACKING: u64 = 0x5041434b; // "PACK"
pub const TAG_CALIBRATION: u64 = 0x43414c42; // "CALB"

/// One step of splitmix64 (Steele–Lea–Flood finalizer).
#[must_use]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit value from `(seed, tag, a, b)`; used both for keying
/// streams and for deriving per-trial sub-seeds.
#[must_use]
pub fn derive(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let k0 = splitmix64(seed);
    let k1 = splitmix64(k0 ^ tag);
    let k2 = splitmix64(k1 ^ a);
    splitmix64(k2 ^ b)
}

/// The pinned generator for the stream at coordinates `(tag, a, b)` under
/// `seed`.
#[must_use]
pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    let k0 = splitmix64(seed);
    let k1 = splitmix64(k0 ^ tag);
    let k2 = splitmix64(k1 ^ a);
    let k3 = splitmix64(k2 ^ b);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&k0.to_le_bytes());
    key[8..16].copy_from_slice(&k1.to_le_bytes());
    key[16..24].copy_from_slice(&k2.to_le_bytes());
    key[24..32].copy_from_slice(&k3.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw in [0, 1) with 53-bit resolution.
pub fn uniform_f64(rng: &mut impl RngCore) -> f64 {
    // 2^-53; the top 53 bits of the word form the mantissa.
    (rng.next_u64() >> 11) as f64 * 1.110_223_024_625_156_5e-16
}

/// Uniform draw in the open interval (0, 1); rejects exact zeros so the
/// result is safe to pass to `ln`.
pub fn uniform_open_f64(rng: &mut impl RngCore) -> f64 {
    loop {
        let u = uniform_f64(rng);
        if u > 0.0 {
            return u;
        }
    }
}
