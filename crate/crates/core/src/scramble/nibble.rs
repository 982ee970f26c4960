//! Four-bit channel representation used by the LE and ELE schemes.
//!
//! A 3-channel 8-bit block becomes a 6-channel block of nibbles: channel
//! `2c` holds the upper nibble of input channel `c`, channel `2c + 1` the
//! lower nibble.

use crate::error::{Error, Result};

pub fn bit_split(block: &[u8], channels: usize) -> Result<Vec<u8>> {
    if channels != 3 {
        return Err(Error::dim(format!(
            "bit split needs a 3-channel block, got {channels} channels"
        )));
    }
    if block.len() % 3 != 0 {
        return Err(Error::dim(format!(
            "block length {} is not a multiple of 3",
            block.len()
        )));
    }
    let mut out = Vec::with_capacity(block.len() * 2);
    for &v in block {
        out.push(v >> 4);
        out.push(v & 0x0f);
    }
    Ok(out)
}

pub fn bit_merge(nibbles: &[u8]) -> Result<Vec<u8>> {
    if nibbles.len() % 6 != 0 {
        return Err(Error::dim(format!(
            "nibble block length {} is not a multiple of 6",
            nibbles.len()
        )));
    }
    if let Some(&v) = nibbles.iter().find(|&&v| v > 15) {
        return Err(Error::Range(format!("nibble value {v} exceeds 15")));
    }
    Ok(nibbles.chunks_exact(2).map(|p| (p[0] << 4) | p[1]).collect())
}

/// Negative-positive transform on a 4-bit value.
#[inline]
pub fn np_transform4(v: u8, flag: bool) -> u8 {
    debug_assert!(v <= 15);
    if flag {
        15 - v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_definition() {
        let out = bit_split(&[0xab, 0, 0], 3).unwrap();
        assert_eq!(&out[..2], &[0xa, 0xb]);
        assert_eq!(bit_split(&[255, 255, 255], 3).unwrap(), vec![15; 6]);
        assert_eq!(bit_split(&[0; 48], 3).unwrap(), vec![0; 96]);
        assert!(matches!(bit_split(&[0; 16], 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn merge_definition_and_range() {
        assert_eq!(bit_merge(&[0xa, 0xb, 0, 0, 0, 0]).unwrap()[0], 0xab);
        assert!(matches!(
            bit_merge(&[16, 0, 0, 0, 0, 0]),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn np4() {
        assert_eq!(np_transform4(0, true), 15);
        assert_eq!(np_transform4(np_transform4(7, true), true), 7);
        for v in 0..16 {
            assert_eq!(np_transform4(v, false), v);
        }
    }

    proptest! {
        #[test]
        fn merge_inverts_split(block in proptest::collection::vec(any::<u8>(), 0..30).prop_map(|mut v| { v.truncate(v.len() / 3 * 3); v })) {
            prop_assert_eq!(bit_merge(&bit_split(&block, 3).unwrap()).unwrap(), block);
        }
    }
}
