//! EtC: per-block rotation and flip, block-wide negative-positive transform
//! and color channel shuffle, followed by a block-location shuffle.

use crate::domain::{assemble, segment, Image8, ScrambleKey};
use crate::error::{Error, Result};
use crate::keying::{derive, invert_permutation, is_permutation, random_permutation};

/// Operations for one EtC block.
///
/// `rot_flip & 3` is the number of clockwise quarter turns; bit 2 adds a
/// horizontal flip after rotating. Color channel `c` of the output is input
/// channel `color_perm[c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EtcBlockOps {
    pub rot_flip: u8,
    pub np_flag: bool,
    pub color_perm: [usize; 3],
}

impl EtcBlockOps {
    pub const IDENTITY: EtcBlockOps = EtcBlockOps {
        rot_flip: 0,
        np_flag: false,
        color_perm: [0, 1, 2],
    };

    pub fn new(rot_flip: u8, np_flag: bool, color_perm: [usize; 3]) -> Result<Self> {
        if rot_flip >= 8 {
            return Err(Error::Range(format!("rot_flip {rot_flip} not in [0, 8)")));
        }
        if !is_permutation(&color_perm) {
            return Err(Error::Range(format!(
                "color permutation {color_perm:?} is not a bijection"
            )));
        }
        Ok(EtcBlockOps {
            rot_flip,
            np_flag,
            color_perm,
        })
    }

    pub fn derive(key: &ScrambleKey, index: u64) -> Self {
        let mut s = derive(key, "etc-block", index);
        let rot_flip = s.below(8) as u8;
        let np_flag = s.below(2) == 1;
        let p = random_permutation(&mut s, 3).expect("3 > 0");
        EtcBlockOps {
            rot_flip,
            np_flag,
            color_perm: [p[0], p[1], p[2]],
        }
    }

    pub fn apply(&self, block: &[u8], block_size: usize) -> Result<Vec<u8>> {
        check_block(block, block_size)?;
        let src = spatial_source(self.rot_flip, block_size);
        let mut out = Vec::with_capacity(block.len());
        for &p in &src {
            for &c in &self.color_perm {
                let v = block[p * 3 + c];
                out.push(if self.np_flag { 255 - v } else { v });
            }
        }
        Ok(out)
    }

    pub fn invert(&self, block: &[u8], block_size: usize) -> Result<Vec<u8>> {
        check_block(block, block_size)?;
        let src = spatial_source(self.rot_flip, block_size);
        let mut out = vec![0u8; block.len()];
        for (q, &p) in src.iter().enumerate() {
            for (c_out, &c_in) in self.color_perm.iter().enumerate() {
                let v = block[q * 3 + c_out];
                out[p * 3 + c_in] = if self.np_flag { 255 - v } else { v };
            }
        }
        Ok(out)
    }
}

fn check_block(block: &[u8], block_size: usize) -> Result<()> {
    if block.len() != block_size * block_size * 3 {
        return Err(Error::dim(format!(
            "EtC block has {} entries, expected {}x{}x3",
            block.len(),
            block_size,
            block_size
        )));
    }
    Ok(())
}

/// For each output pixel of a `b x b` block, the input pixel it comes from.
fn spatial_source(rot_flip: u8, b: usize) -> Vec<usize> {
    let turns = rot_flip & 3;
    let flip = rot_flip & 4 != 0;
    let mut src = Vec::with_capacity(b * b);
    for h in 0..b {
        for w in 0..b {
            let (mut y, mut x) = if flip { (h, b - 1 - w) } else { (h, w) };
            // one clockwise turn reads out(y, x) from in(b-1-x, y)
            for _ in 0..turns {
                (y, x) = (b - 1 - x, y);
            }
            src.push(y * b + x);
        }
    }
    src
}

fn check_color(img: &Image8) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::dim(format!(
            "EtC needs a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    Ok(())
}

fn check_plan(n_ops: usize, n_blocks: usize, block_perm: &[usize]) -> Result<()> {
    if n_ops != n_blocks {
        return Err(Error::dim(format!(
            "{n_ops} block operations for {n_blocks} blocks"
        )));
    }
    if block_perm.len() != n_blocks || !is_permutation(block_perm) {
        return Err(Error::dim(format!(
            "block permutation is not a bijection on {n_blocks} blocks"
        )));
    }
    Ok(())
}

/// Applies explicit per-block operations then shuffles block locations so
/// that output block `i` is transformed input block `block_perm[i]`.
pub fn etc_apply(
    img: &Image8,
    block_size: usize,
    ops: &[EtcBlockOps],
    block_perm: &[usize],
) -> Result<Image8> {
    check_color(img)?;
    let mut grid = segment(img, block_size)?;
    check_plan(ops.len(), grid.len(), block_perm)?;
    let transformed = grid
        .blocks()
        .iter()
        .zip(ops)
        .map(|(blk, op)| op.apply(blk, block_size))
        .collect::<Result<Vec<_>>>()?;
    for (dst, &src) in grid.blocks_mut().iter_mut().zip(block_perm) {
        *dst = transformed[src].clone();
    }
    assemble(&grid)
}

pub fn etc_unapply(
    img: &Image8,
    block_size: usize,
    ops: &[EtcBlockOps],
    block_perm: &[usize],
) -> Result<Image8> {
    check_color(img)?;
    let mut grid = segment(img, block_size)?;
    check_plan(ops.len(), grid.len(), block_perm)?;
    let inv = invert_permutation(block_perm);
    let unshuffled: Vec<Vec<u8>> = inv.iter().map(|&i| grid.blocks()[i].clone()).collect();
    for ((dst, blk), op) in grid.blocks_mut().iter_mut().zip(&unshuffled).zip(ops) {
        *dst = op.invert(blk, block_size)?;
    }
    assemble(&grid)
}
