//! Deterministic subkey derivation and key files.
//!
//! A [`SubkeyStream`] is a ChaCha20 generator whose 256-bit seed is
//! `SHA-256(tag || master_seed || len(label) || label || index)`. All
//! scheme-specific randomness (pixel permutations, negative-positive masks,
//! block shuffles, EtC block operations) is drawn from streams derived this
//! way, so a scramble depends only on the key and never on thread scheduling.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::domain::{SchemeId, ScrambleKey};
use crate::error::{Error, Result};

const DERIVE_TAG: &[u8] = b"blockscramble/subkey/v1";
const KEYFILE_VERSION: u32 = 1;

#[derive(Clone)]
pub struct SubkeyStream {
    rng: ChaCha20Rng,
}

impl SubkeyStream {
    /// Stream for `(label, index)` under an arbitrary 256-bit seed.
    ///
    /// Panics if `label` is empty.
    pub fn from_seed(seed: &[u8; 32], label: &str, index: u64) -> Self {
        assert!(!label.is_empty(), "subkey label must be nonempty");
        let mut h = Sha256::new();
        h.update(DERIVE_TAG);
        h.update(seed);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        SubkeyStream {
            rng: ChaCha20Rng::from_seed(h.finalize().into()),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `[0, bound)` by rejection sampling.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        // smallest x such that [x, 2^64) has a length divisible by bound
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.rng.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    /// Uniform real in `[0, 1)` with 53 random bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }
}

/// Stream for `(label, index)` under a scramble key's master seed.
pub fn derive(master: &ScrambleKey, label: &str, index: u64) -> SubkeyStream {
    SubkeyStream::from_seed(&master.master_seed, label, index)
}

/// Fisher-Yates shuffle of the identity on `0..n`.
pub fn random_permutation(stream: &mut SubkeyStream, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyDomain("permutation of an empty set"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = stream.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    Ok(perm)
}

/// `n` fair bits, taken least-significant first from successive 64-bit words.
pub fn random_bits(stream: &mut SubkeyStream, n: usize) -> Vec<bool> {
    let mut bits = Vec::with_capacity(n);
    while bits.len() < n {
        let word = stream.next_u64();
        let take = (n - bits.len()).min(64);
        bits.extend((0..take).map(|k| (word >> k) & 1 == 1));
    }
    bits
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Canonical key file text.
pub fn keyfile_string(key: &ScrambleKey) -> String {
    format!(
        "version={KEYFILE_VERSION}\nscheme={}\nblock_size={}\nseed={}\n",
        key.scheme,
        key.block_size,
        hex::encode(key.master_seed)
    )
}

pub fn parse_keyfile(text: &str) -> Result<ScrambleKey> {
    let mut version = None;
    let mut scheme = None;
    let mut block_size = None;
    let mut seed = None;

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let perr = |field: &str, msg: String| Error::Parse {
            line: line_no,
            field: field.to_string(),
            msg,
        };
        let (field, value) = line
            .split_once('=')
            .ok_or_else(|| perr(line, "expected `field=value`".into()))?;
        let (field, value) = (field.trim(), value.trim());
        let slot_taken = match field {
            "version" => version.is_some(),
            "scheme" => scheme.is_some(),
            "block_size" => block_size.is_some(),
            "seed" => seed.is_some(),
            _ => return Err(perr(field, "unknown field".into())),
        };
        if slot_taken {
            return Err(perr(field, "duplicate field".into()));
        }
        match field {
            "version" => {
                let v: u32 = value
                    .parse()
                    .map_err(|_| perr(field, format!("not an integer: {value:?}")))?;
                if v != KEYFILE_VERSION {
                    return Err(perr(field, format!("unsupported version {v}")));
                }
                version = Some(v);
            }
            "scheme" => scheme = Some(value.parse::<SchemeId>()?),
            "block_size" => {
                let b: usize = value
                    .parse()
                    .map_err(|_| perr(field, format!("not an integer: {value:?}")))?;
                if b == 0 {
                    return Err(perr(field, "block size must be positive".into()));
                }
                block_size = Some(b);
            }
            _ => {
                let bytes = hex::decode(value)
                    .map_err(|e| perr(field, format!("invalid hex: {e}")))?;
                let arr: [u8; 32] = bytes
                    .try_into()
                    .map_err(|_| perr(field, "expected 64 hex characters".into()))?;
                seed = Some(arr);
            }
        }
    }

    let missing = |field: &str| Error::Parse {
        line: 0,
        field: field.to_string(),
        msg: "missing field".into(),
    };
    version.ok_or_else(|| missing("version"))?;
    ScrambleKey::new(
        scheme.ok_or_else(|| missing("scheme"))?,
        block_size.ok_or_else(|| missing("block_size"))?,
        seed.ok_or_else(|| missing("seed"))?,
    )
}

pub fn write_keyfile(key: &ScrambleKey, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, keyfile_string(key)).map_err(|e| Error::io(path, e))
}

pub fn read_keyfile(path: impl AsRef<Path>) -> Result<ScrambleKey> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keyfile(&text)
}

/// SHA-256 of the canonical key file, hex encoded. Safe to log.
pub fn fingerprint(key: &ScrambleKey) -> String {
    hex::encode(Sha256::digest(keyfile_string(key).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> ScrambleKey {
        ScrambleKey::from_u64(SchemeId::Ele, 4, 42).unwrap()
    }

    fn first(stream: &mut SubkeyStream, n: usize) -> Vec<u64> {
        (0..n).map(|_| stream.next_u64()).collect()
    }

    #[test]
    fn derivation_is_deterministic() {
        let a = first(&mut derive(&key(), "pixelperm", 0), 16);
        let b = first(&mut derive(&key(), "pixelperm", 0), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_labels_and_indices_give_distinct_streams() {
        let base = first(&mut derive(&key(), "pixelperm", 0), 16);
        let other_index = first(&mut derive(&key(), "pixelperm", 1), 16);
        let other_label = first(&mut derive(&key(), "blockperm", 0), 16);
        assert!(base.iter().zip(&other_index).all(|(a, b)| a != b));
        assert!(base.iter().zip(&other_label).all(|(a, b)| a != b));
    }

    #[test]
    fn permutation_edge_cases() {
        let mut s = derive(&key(), "p", 0);
        assert_eq!(random_permutation(&mut s, 1).unwrap(), vec![0]);
        assert!(matches!(
            random_permutation(&mut s, 0),
            Err(Error::EmptyDomain(_))
        ));
        let a = random_permutation(&mut derive(&key(), "p", 7), 96).unwrap();
        let b = random_permutation(&mut derive(&key(), "p", 7), 96).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permutations_of_three_are_uniform() {
        // 6000 streams, chi-square with 5 degrees of freedom at alpha = 0.01
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut counts = [0usize; 6];
        for i in 0..6000 {
            let p = random_permutation(&mut derive(&key(), "chi", i), 3).unwrap();
            let slot = perms.iter().position(|q| q[..] == p[..]).unwrap();
            counts[slot] += 1;
        }
        let expected = 1000.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 15.086, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn bits_are_reproducible_and_fair() {
        let mut s = derive(&key(), "bits", 0);
        assert!(random_bits(&mut s, 0).is_empty());
        let a = random_bits(&mut derive(&key(), "bits", 1), 96);
        let b = random_bits(&mut derive(&key(), "bits", 1), 96);
        assert_eq!(a, b);
        let many = random_bits(&mut derive(&key(), "bits", 2), 100_000);
        let ones = many.iter().filter(|&&b| b).count() as f64 / 1e5;
        assert!((0.49..=0.51).contains(&ones), "{ones}");
    }

    #[test]
    fn below_stays_in_range() {
        let mut s = derive(&key(), "below", 0);
        for bound in [1u64, 2, 3, 7, 1 << 40, u64::MAX] {
            for _ in 0..100 {
                assert!(s.below(bound) < bound);
            }
        }
    }

    #[test]
    fn keyfile_round_trip_and_errors() {
        let k = key();
        let text = keyfile_string(&k);
        assert!(text.starts_with("version=1\nscheme=ELE\nblock_size=4\nseed="));
        assert_eq!(parse_keyfile(&text).unwrap(), k);

        let bad_scheme = text.replace("scheme=ELE", "scheme=XYZ");
        assert!(matches!(parse_keyfile(&bad_scheme), Err(Error::Scheme(_))));

        let no_seed: String = text.lines().filter(|l| !l.starts_with("seed")).map(|l| format!("{l}\n")).collect();
        match parse_keyfile(&no_seed) {
            Err(Error::Parse { field, .. }) => assert_eq!(field, "seed"),
            other => panic!("unexpected {other:?}"),
        }

        let short_seed = "version=1\nscheme=LE\nblock_size=4\nseed=abcd\n";
        match parse_keyfile(short_seed) {
            Err(Error::Parse { line, field, .. }) => assert_eq!((line, field.as_str()), (4, "seed")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_keyfile("version=1\nbogus\n").is_err());
    }

    #[test]
    fn keyfile_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.key");
        write_keyfile(&key(), &path).unwrap();
        assert_eq!(read_keyfile(&path).unwrap(), key());
        assert_eq!(fingerprint(&key()), fingerprint(&read_keyfile(&path).unwrap()));
    }

    proptest! {
        #[test]
        fn permutations_are_bijections(seed in any::<u64>(), n in 1usize..200) {
            let p = random_permutation(&mut SubkeyStream::from_seed(&[1; 32], "prop", seed), n).unwrap();
            prop_assert!(is_permutation(&p));
            let inv = invert_permutation(&p);
            prop_assert!(p.iter().enumerate().all(|(i, &x)| inv[x] == i));
        }

        #[test]
        fn keyfile_round_trips(seed in any::<[u8; 32]>(), b in 1usize..64, s in 0usize..3) {
            let k = ScrambleKey::new(SchemeId::ALL[s], b, seed).unwrap();
            prop_assert_eq!(parse_keyfile(&keyfile_string(&k)).unwrap(), k);
        }
    }
}
