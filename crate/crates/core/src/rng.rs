//! Deterministic random streams.
//!
//! Every stream is a xoshiro256** generator. Its 256-bit state is filled
//! with four consecutive SplitMix64 outputs starting from the 64-bit key
//! `seed XOR fnv1a64(label)`, where `label` is a UTF-8 string such as a
//! language id. Bounded integers are drawn with a single widening multiply:
//! `index = (next_u64() as u128 * n) >> 64`, no rejection step. Any
//! reimplementation of these three pieces reproduces every segment draw.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type StreamRng = Xoshiro256StarStar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Generator keyed by `(seed, label)`.
pub fn keyed(seed: u64, label: &str) -> StreamRng {
    StreamRng::seed_from_u64(seed ^ fnv1a64(label.as_bytes()))
}

/// Uniform integer in `0..n`; `n` must be positive.
#[inline]
pub fn uniform_index(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    ((u128::from(rng.next_u64()) * n as u128) >> 64) as usize
}

/// Uniform `f64` in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // Frozen from an independent SplitMix64/xoshiro256** implementation.
        assert_eq!(fnv1a64(b"A"), 0xaf63_fc4c_8602_22ec);
        assert_eq!(
            StreamRng::seed_from_u64(0).next_u64(),
            11_091_344_671_253_066_420
        );
    }

    #[test]
    fn uniform_index_in_range() {
        let mut rng = keyed(3, "x");
        for n in 1..50 {
            assert!(uniform_index(&mut rng, n) < n);
        }
        let u = unit_f64(&mut rng);
        assert!((0.0..1.0).contains(&u));
    }
}
