//! CIFAR binary format.
//!
//! Each record is the label byte (CIFAR-10) or coarse and fine label bytes
//! (CIFAR-100), followed by 3072 pixel bytes: the 1024 red values of the
//! 32x32 image row-major, then the green plane, then the blue plane.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::domain::{Image8, LabeledExample};
use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
const PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
const PIXELS: usize = 3 * PLANE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    /// Number of (fine) classes.
    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

impl FromStr for CifarVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cifar10" | "cifar-10" => Ok(CifarVariant::Cifar10),
            "cifar100" | "cifar-100" => Ok(CifarVariant::Cifar100),
            _ => Err(Error::Domain(format!("unknown CIFAR variant {s:?}"))),
        }
    }
}

/// One record. For CIFAR-100 `label` is the fine label and `coarse` holds
/// the coarse one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub coarse: Option<u8>,
    pub label: u8,
    pub image: Image8,
}

impl CifarRecord {
    pub fn example(&self) -> LabeledExample {
        LabeledExample {
            image: self.image.clone(),
            label: usize::from(self.label),
        }
    }
}

pub fn planar_to_interleaved(planar: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; PIXELS];
    for p in 0..PLANE {
        for c in 0..3 {
            out[p * 3 + c] = planar[c * PLANE + p];
        }
    }
    out
}

pub fn interleaved_to_planar(pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; PIXELS];
    for p in 0..PLANE {
        for c in 0..3 {
            out[c * PLANE + p] = pixels[p * 3 + c];
        }
    }
    out
}

pub fn decode_cifar(bytes: &[u8], variant: CifarVariant) -> Result<Vec<CifarRecord>> {
    let rec = variant.record_len();
    if bytes.len() % rec != 0 {
        let offset = (bytes.len() - bytes.len() % rec) as u64;
        return Err(Error::format(
            offset,
            format!(
                "truncated record: {} trailing bytes, records are {rec} bytes",
                bytes.len() % rec
            ),
        ));
    }
    bytes
        .chunks_exact(rec)
        .enumerate()
        .map(|(i, chunk)| {
            let (labels, planar) = chunk.split_at(variant.label_bytes());
            let label = *labels.last().expect("at least one label byte");
            if usize::from(label) >= variant.classes() {
                return Err(Error::Range(format!(
                    "record {i} (byte offset {}): label {label} outside [0, {})",
                    i * rec,
                    variant.classes()
                )));
            }
            let coarse = match variant {
                CifarVariant::Cifar10 => None,
                CifarVariant::Cifar100 => {
                    if labels[0] >= 20 {
                        return Err(Error::Range(format!(
                            "record {i}: coarse label {} outside [0, 20)",
                            labels[0]
                        )));
                    }
                    Some(labels[0])
                }
            };
            Ok(CifarRecord {
                coarse,
                label,
                image: Image8::new(CIFAR_SIDE, CIFAR_SIDE, 3, planar_to_interleaved(planar))?,
            })
        })
        .collect()
}

pub fn encode_cifar(records: &[CifarRecord], variant: CifarVariant) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(records.len() * variant.record_len());
    for (i, r) in records.iter().enumerate() {
        if (r.image.height(), r.image.width(), r.image.channels()) != (CIFAR_SIDE, CIFAR_SIDE, 3) {
            return Err(Error::dim(format!("record {i} is not a 32x32x3 image")));
        }
        if usize::from(r.label) >= variant.classes() {
            return Err(Error::Range(format!("record {i}: label {} out of range", r.label)));
        }
        if variant == CifarVariant::Cifar100 {
            out.push(r.coarse.unwrap_or(0));
        }
        out.push(r.label);
        out.extend(interleaved_to_planar(r.image.data()));
    }
    Ok(out)
}

pub fn read_cifar_records(path: impl AsRef<Path>, variant: CifarVariant) -> Result<Vec<CifarRecord>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cifar(&bytes, variant)
}

pub fn read_cifar(path: impl AsRef<Path>, variant: CifarVariant) -> Result<Vec<LabeledExample>> {
    Ok(read_cifar_records(path, variant)?
        .iter()
        .map(CifarRecord::example)
        .collect())
}

pub fn write_cifar(
    path: impl AsRef<Path>,
    records: &[CifarRecord],
    variant: CifarVariant,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_cifar(records, variant)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
