//! Dataset and image file I/O, augmentation and whole-dataset scrambling.

mod cifar;
mod png;

pub use self::cifar::{
    decode_cifar, encode_cifar, interleaved_to_planar, planar_to_interleaved, read_cifar,
    read_cifar_records, write_cifar, CifarRecord, CifarVariant, CIFAR_SIDE,
};
pub use self::png::{png_read, png_write};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::domain::{Image8, SchemeId, ScrambleKey};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::keying::{derive, fingerprint, SubkeyStream};
use crate::scramble::ScramblePlan;

const AUG_PAD: usize = 4;

/// Reflect-pad by 4, take a random crop of the original size, then flip
/// horizontally with probability 1/2.
pub fn augment(img: &Image8, stream: &mut SubkeyStream) -> Image8 {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let dy = stream.below(2 * AUG_PAD as u64 + 1) as isize - AUG_PAD as isize;
    let dx = stream.below(2 * AUG_PAD as u64 + 1) as isize - AUG_PAD as isize;
    let flip = stream.below(2) == 1;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let xx = if flip { w - 1 - x } else { x };
            let sy = reflect(y as isize + dy, h);
            let sx = reflect(xx as isize + dx, w);
            for ch in 0..c {
                data.push(img.get(sy, sx, ch));
            }
        }
    }
    Image8::new(h, w, c, data).expect("same shape as input")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub scheme: SchemeId,
    pub block_size: usize,
    pub key_fingerprint: String,
    pub count: usize,
    pub augmented: bool,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "scheme={}", self.scheme).unwrap();
        writeln!(s, "block_size={}", self.block_size).unwrap();
        writeln!(s, "key_fingerprint={}", self.key_fingerprint).unwrap();
        writeln!(s, "count={}", self.count).unwrap();
        writeln!(s, "augmented={}", self.augmented).unwrap();
        s
    }

    /// `<out>.manifest` next to the scrambled dataset.
    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest");
        PathBuf::from(name)
    }
}

/// Scrambles every record with one key, optionally augmenting first.
/// Labels and record order are carried through unchanged.
pub fn scramble_records(
    records: &[CifarRecord],
    key: &ScrambleKey,
    augment_first: bool,
    exec: Exec,
) -> Result<Vec<CifarRecord>> {
    let plan = ScramblePlan::new(key, CIFAR_SIDE, CIFAR_SIDE)?;
    exec.map_range(records.len(), |i| {
        let r = &records[i];
        let src = if augment_first {
            augment(&r.image, &mut derive(key, "augment", i as u64))
        } else {
            r.image.clone()
        };
        Ok(CifarRecord {
            coarse: r.coarse,
            label: r.label,
            image: plan.scramble(&src)?,
        })
    })
    .into_iter()
    .collect()
}

pub fn scramble_dataset(
    in_path: impl AsRef<Path>,
    out_path: impl AsRef<Path>,
    key: &ScrambleKey,
    variant: CifarVariant,
    augment_first: bool,
    exec: Exec,
) -> Result<Manifest> {
    let out_path = out_path.as_ref();
    let records = read_cifar_records(in_path, variant)?;
    let scrambled = scramble_records(&records, key, augment_first, exec)?;
    write_cifar(out_path, &scrambled, variant)?;
    let manifest = Manifest {
        scheme: key.scheme,
        block_size: key.block_size,
        key_fingerprint: fingerprint(key),
        count: scrambled.len(),
        augmented: augment_first,
    };
    let mpath = Manifest::path_for(out_path);
    fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(mpath, e))?;
    Ok(manifest)
}
