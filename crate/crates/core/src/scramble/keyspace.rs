//! Exact key-space sizes.
//!
//! With `P = 6 B^2` nibble positions per block and `N` blocks:
//!
//! * LE:  `P! * 2^P`
//! * EtC: `8^N * 2^N * 6^N * N!`
//! * ELE: `(P! * 2^P)^N * N!`

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

use crate::domain::SchemeId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KeySpace {
    pub exact: BigUint,
    pub log2_bits: f64,
}

impl KeySpace {
    pub fn from_exact(exact: BigUint) -> Self {
        let log2_bits = log2_big(&exact);
        KeySpace { exact, log2_bits }
    }
}

pub fn factorial(n: u64) -> BigUint {
    (2..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// `log2(x)` for a positive big integer, from its top 64 bits.
pub fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return x.to_u64().map_or(f64::NEG_INFINITY, |v| (v as f64).log2());
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().expect("64 bits fit");
    (top as f64).log2() + shift as f64
}

fn le_block_space(block_size: u64) -> BigUint {
    let positions = 6 * block_size * block_size;
    factorial(positions) << positions
}

pub fn key_space(scheme: SchemeId, block_size: usize, blocks: usize) -> Result<KeySpace> {
    if block_size == 0 || blocks == 0 {
        return Err(Error::Range(format!(
            "key space needs B >= 1 and N >= 1, got B={block_size}, N={blocks}"
        )));
    }
    let (b, n) = (block_size as u64, blocks as u64);
    let exact = match scheme {
        SchemeId::Le => le_block_space(b),
        SchemeId::Etc => BigUint::from(8u32 * 2 * 6).pow(n as u32) * factorial(n),
        SchemeId::Ele => le_block_space(b).pow(n as u32) * factorial(n),
    };
    Ok(KeySpace::from_exact(exact))
}

/// EtC restricted to color shuffling and block shuffling: `6^N * N!`.
pub fn etc_color_only_key_space(blocks: usize) -> Result<KeySpace> {
    if blocks == 0 {
        return Err(Error::Range("key space needs N >= 1".into()));
    }
    Ok(KeySpace::from_exact(
        BigUint::from(6u32).pow(blocks as u32) * factorial(blocks as u64),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    // log2(n!) by direct summation of log2(k)
    fn log2_factorial(n: u64) -> f64 {
        (2..=n).map(|k| (k as f64).log2()).sum()
    }

    #[test]
    fn small_factorials() {
        assert_eq!(factorial(0), BigUint::one());
        assert_eq!(factorial(5), BigUint::from(120u32));
        assert_eq!(factorial(20).to_u64(), Some(2_432_902_008_176_640_000));
    }

    #[test]
    fn le_b4_is_about_594_bits() {
        let ks = key_space(SchemeId::Le, 4, 64).unwrap();
        let oracle = log2_factorial(96) + 96.0;
        assert!((ks.log2_bits - oracle).abs() < 1e-9);
        assert!((ks.log2_bits - 594.2).abs() < 0.1, "{}", ks.log2_bits);
    }

    #[test]
    fn etc_b4_is_about_717_bits() {
        let ks = key_space(SchemeId::Etc, 4, 64).unwrap();
        let oracle = 64.0 * (3.0 + 1.0 + 6f64.log2()) + log2_factorial(64);
        assert!((ks.log2_bits - oracle).abs() < 1e-9);
        assert!((ks.log2_bits - 717.0).abs() < 1.0, "{}", ks.log2_bits);
    }

    #[test]
    fn etc_single_block_is_96() {
        assert_eq!(
            key_space(SchemeId::Etc, 4, 1).unwrap().exact,
            BigUint::from(96u32)
        );
        assert_eq!(
            etc_color_only_key_space(2).unwrap().exact,
            BigUint::from(72u32)
        );
    }

    #[test]
    fn log2_consistency() {
        for s in SchemeId::ALL {
            for (b, n) in [(1, 1), (2, 4), (4, 64)] {
                let ks = key_space(s, b, n).unwrap();
                // independent check: x in [2^(bits-1), 2^bits)
                let bits = ks.exact.bits() as f64;
                assert!(ks.log2_bits >= bits - 1.0 - 1e-9 && ks.log2_bits < bits + 1e-9);
            }
        }
        assert!(key_space(SchemeId::Le, 0, 1).is_err());
    }
}
