//! Forward and inverse block-wise scrambling.

mod etc;
mod keyspace;
mod nibble;
mod pixel;

pub use etc::{etc_apply, etc_unapply, EtcBlockOps};
pub use keyspace::{etc_color_only_key_space, factorial, key_space, log2_big, KeySpace};
pub use nibble::{bit_merge, bit_split, np_transform4};
pub use pixel::{pixel_apply, pixel_unapply, LeBlockOps};

use crate::domain::{Image8, SchemeId, ScrambleKey};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::keying::{derive, random_permutation};

/// Every keyed choice for one image geometry, materialized once so that a
/// whole dataset can be scrambled without re-deriving subkeys per image.
#[derive(Debug, Clone)]
pub struct ScramblePlan {
    block_size: usize,
    height: usize,
    width: usize,
    ops: PlanOps,
}

#[derive(Debug, Clone)]
enum PlanOps {
    Le(LeBlockOps),
    Ele(Vec<LeBlockOps>, Vec<usize>),
    Etc(Vec<EtcBlockOps>, Vec<usize>),
}

impl ScramblePlan {
    pub fn new(key: &ScrambleKey, height: usize, width: usize) -> Result<Self> {
        let b = key.block_size;
        for (axis, len) in [("height", height), ("width", width)] {
            if len == 0 || len % b != 0 {
                return Err(Error::dim(format!(
                    "block size {b} does not divide image {axis} {len}"
                )));
            }
        }
        let n = (height / b) * (width / b);
        let block_perm = || random_permutation(&mut derive(key, "blockperm", 0), n);
        let ops = match key.scheme {
            SchemeId::Le => PlanOps::Le(LeBlockOps::derive(key, 0)),
            SchemeId::Ele => PlanOps::Ele(
                (0..n as u64).map(|i| LeBlockOps::derive(key, i)).collect(),
                block_perm()?,
            ),
            SchemeId::Etc => PlanOps::Etc(
                (0..n as u64).map(|i| EtcBlockOps::derive(key, i)).collect(),
                block_perm()?,
            ),
        };
        Ok(ScramblePlan {
            block_size: b,
            height,
            width,
            ops,
        })
    }

    pub fn scheme(&self) -> SchemeId {
        match self.ops {
            PlanOps::Le(_) => SchemeId::Le,
            PlanOps::Ele(..) => SchemeId::Ele,
            PlanOps::Etc(..) => SchemeId::Etc,
        }
    }

    /// Block-location shuffle (`None` for LE).
    pub fn block_permutation(&self) -> Option<&[usize]> {
        match &self.ops {
            PlanOps::Le(_) => None,
            PlanOps::Ele(_, p) | PlanOps::Etc(_, p) => Some(p),
        }
    }

    fn check(&self, img: &Image8) -> Result<()> {
        if img.height() != self.height || img.width() != self.width {
            return Err(Error::dim(format!(
                "plan built for {}x{}, image is {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )));
        }
        if img.channels() != 3 {
            return Err(Error::dim(format!(
                "{} scrambling needs a 3-channel image, got {} channel(s)",
                self.scheme(),
                img.channels()
            )));
        }
        Ok(())
    }

    pub fn scramble(&self, img: &Image8) -> Result<Image8> {
        self.check(img)?;
        let b = self.block_size;
        match &self.ops {
            PlanOps::Le(op) => pixel_apply(img, b, std::slice::from_ref(op), None),
            PlanOps::Ele(ops, perm) => pixel_apply(img, b, ops, Some(perm)),
            PlanOps::Etc(ops, perm) => etc_apply(img, b, ops, perm),
        }
    }

    pub fn unscramble(&self, img: &Image8) -> Result<Image8> {
        self.check(img)?;
        let b = self.block_size;
        match &self.ops {
            PlanOps::Le(op) => pixel_unapply(img, b, std::slice::from_ref(op), None),
            PlanOps::Ele(ops, perm) => pixel_unapply(img, b, ops, Some(perm)),
            PlanOps::Etc(ops, perm) => etc_unapply(img, b, ops, perm),
        }
    }

    pub fn scramble_batch(&self, imgs: &[Image8], exec: Exec) -> Result<Vec<Image8>> {
        exec.map(imgs, |img| self.scramble(img)).into_iter().collect()
    }

    pub fn unscramble_batch(&self, imgs: &[Image8], exec: Exec) -> Result<Vec<Image8>> {
        exec.map(imgs, |img| self.unscramble(img)).into_iter().collect()
    }
}

fn expect_scheme(key: &ScrambleKey, expected: SchemeId) -> Result<()> {
    if key.scheme != expected {
        return Err(Error::KeyMisuse {
            expected,
            found: key.scheme,
        });
    }
    Ok(())
}

/// Scramble with whichever scheme the key names.
pub fn scramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    ScramblePlan::new(key, img.height(), img.width())?.scramble(img)
}

pub fn unscramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    ScramblePlan::new(key, img.height(), img.width())?.unscramble(img)
}

pub fn le_scramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    expect_scheme(key, SchemeId::Le)?;
    scramble(img, key)
}

pub fn le_unscramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    expect_scheme(key, SchemeId::Le)?;
    unscramble(img, key)
}

pub fn etc_scramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    expect_scheme(key, SchemeId::Etc)?;
    scramble(img, key)
}

pub fn etc_unscramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    expect_scheme(key, SchemeId::Etc)?;
    unscramble(img, key)
}

pub fn ele_scramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    expect_scheme(key, SchemeId::Ele)?;
    scramble(img, key)
}

pub fn ele_unscramble(img: &Image8, key: &ScrambleKey) -> Result<Image8> {
    expect_scheme(key, SchemeId::Ele)?;
    unscramble(img, key)
}
