//! Hash functions shared by generated kernels and the host.

use crate::ir::HashFunction;

pub const MURMUR_C1: u64 = 0xff51_afd7_ed55_8ccd;
pub const MURMUR_C2: u64 = 0xc4ce_b9fe_1a85_ec53;

/// Slot value marking an unused key slot.
pub const EMPTY_KEY: i64 = i64::MIN;
/// Slot value marking an unused reference slot.
pub const EMPTY_REF: i64 = -1;
/// Longest eviction chain a cuckoo insertion may follow.
pub const MAX_EVICTIONS: i64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HashError {
    #[error("multiply-shift needs an odd multiplier, got {0:#x}")]
    EvenMultiplier(u64),
    #[error("multiply-shift output width must be in 1..=63, got {0}")]
    BadWidth(u32),
}

pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(MURMUR_C1);
    k ^= k >> 33;
    k = k.wrapping_mul(MURMUR_C2);
    k ^ (k >> 33)
}

/// Murmur finalizer over the seeded key.
pub fn murmur(x: i64, seed: i64) -> i64 {
    fmix64((x ^ seed) as u64) as i64
}

/// `(a·x mod 2^64) >> (64 - bits)`. Callers guarantee `1 <= bits <= 63`.
pub fn multiply_shift(x: i64, a: i64, bits: i64) -> i64 {
    let b = bits.clamp(1, 64) as u32;
    ((a as u64).wrapping_mul(x as u64) >> (64 - b)) as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashInput {
    pub seed: i64,
    /// Output width of multiply-shift.
    pub bits: u32,
}

pub fn eval_hash(function: HashFunction, x: i64, p: HashInput) -> Result<i64, HashError> {
    match function {
        HashFunction::Murmur => Ok(murmur(x, p.seed)),
        HashFunction::MultiplyShift => {
            if p.seed & 1 == 0 {
                return Err(HashError::EvenMultiplier(p.seed as u64));
            }
            if !(1..=63).contains(&p.bits) {
                return Err(HashError::BadWidth(p.bits));
            }
            Ok(multiply_shift(x, p.seed, p.bits as i64))
        }
    }
}

/// Slots for a table that receives at most `rows` keys: a power of two with
/// fill factor at most one half.
pub fn capacity_for(rows: usize) -> usize {
    (rows.max(1) * 2).next_power_of_two()
}

pub fn log2(cap: usize) -> u32 {
    cap.trailing_zeros()
}

/// Next seed in a deterministic sequence (splitmix64).
pub fn next_seed(seed: i64) -> i64 {
    let mut z = (seed as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) as i64
}

/// Multiply-shift needs an odd multiplier; murmur takes any seed.
pub fn multiplier(seed: i64) -> i64 {
    seed | 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_annihilates_multiply_shift() {
        for a in [1i64, 3, 0x1234_5679, -1] {
            assert_eq!(
                eval_hash(
                    HashFunction::MultiplyShift,
                    0,
                    HashInput { seed: a, bits: 10 }
                ),
                Ok(0)
            );
        }
    }

    #[test]
    fn one_bit_output() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: i64 = rng.gen();
            let h = eval_hash(
                HashFunction::MultiplyShift,
                x,
                HashInput {
                    seed: 0x9e37_79b9,
                    bits: 1,
                },
            )
            .unwrap();
            assert!(h == 0 || h == 1);
        }
    }

    #[test]
    fn invalid_params() {
        assert_eq!(
            eval_hash(
                HashFunction::MultiplyShift,
                5,
                HashInput { seed: 4, bits: 3 }
            ),
            Err(HashError::EvenMultiplier(4))
        );
        assert_eq!(
            eval_hash(
                HashFunction::MultiplyShift,
                5,
                HashInput { seed: 5, bits: 64 }
            ),
            Err(HashError::BadWidth(64))
        );
    }

    #[test]
    fn murmur_spreads_keys() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut buckets = vec![0u32; 1024];
        let n = 100_000;
        for _ in 0..n {
            let x: i64 = rng.gen();
            buckets[(murmur(x, 42) & 1023) as usize] += 1;
        }
        let mean = n as f64 / 1024.0;
        let max = *buckets.iter().max().unwrap() as f64;
        assert!(max < 3.0 * mean, "max bucket {max} vs mean {mean}");

        // sequential keys as well
        let mut buckets = vec![0u32; 1024];
        for x in 0..n as i64 {
            buckets[(murmur(x, 7) & 1023) as usize] += 1;
        }
        assert!((*buckets.iter().max().unwrap() as f64) < 3.0 * mean);
    }

    #[test]
    fn fmix_matches_reference_vector() {
        // fmix64 is a bijection with fmix64(0) = 0
        assert_eq!(fmix64(0), 0);
        let a = fmix64(1);
        let mut k: u64 = 1;
        k ^= k >> 33;
        k = k.wrapping_mul(0xff51afd7ed558ccd);
        k ^= k >> 33;
        k = k.wrapping_mul(0xc4ceb9fe1a85ec53);
        k ^= k >> 33;
        assert_eq!(a, k);
    }

    #[test]
    fn capacities() {
        assert_eq!(capacity_for(0), 2);
        assert_eq!(capacity_for(1), 2);
        assert_eq!(capacity_for(3), 8);
        assert_eq!(capacity_for(1000), 2048);
        assert_eq!(log2(2048), 11);
    }
}
