//! LE and ELE: bit split, pixel shuffle and negative-positive transform over
//! the `B*B*6` nibble positions of each block. LE uses one set of block
//! operations for every block and keeps block positions; ELE draws an
//! independent set per block and then shuffles block positions.

use crate::domain::{assemble, segment, Image8, ScrambleKey};
use crate::error::{Error, Result};
use crate::keying::{derive, invert_permutation, random_bits, random_permutation};

use super::nibble::{bit_merge, bit_split, np_transform4};

/// Pixel permutation and negative-positive mask for one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeBlockOps {
    /// `out[i] = in[pixel_perm[i]]` over nibble positions.
    pub pixel_perm: Vec<usize>,
    pub np_mask: Vec<bool>,
}

impl LeBlockOps {
    pub fn new(pixel_perm: Vec<usize>, np_mask: Vec<bool>) -> Result<Self> {
        if pixel_perm.len() != np_mask.len() {
            return Err(Error::dim(format!(
                "permutation over {} positions with a mask of {}",
                pixel_perm.len(),
                np_mask.len()
            )));
        }
        if !crate::keying::is_permutation(&pixel_perm) {
            return Err(Error::Range("pixel_perm is not a bijection".into()));
        }
        Ok(LeBlockOps {
            pixel_perm,
            np_mask,
        })
    }

    /// Draws the operations for block `index` (LE always uses index 0).
    pub fn derive(key: &ScrambleKey, index: u64) -> Self {
        let positions = key.block_size * key.block_size * 6;
        let pixel_perm = random_permutation(&mut derive(key, "pixelperm", index), positions)
            .expect("block has at least one position");
        let np_mask = random_bits(&mut derive(key, "npmask", index), positions);
        LeBlockOps {
            pixel_perm,
            np_mask,
        }
    }

    pub fn positions(&self) -> usize {
        self.pixel_perm.len()
    }

    /// Scramble one 3-channel 8-bit block.
    pub fn apply(&self, block: &[u8]) -> Result<Vec<u8>> {
        let nib = bit_split(block, 3)?;
        self.check_len(nib.len())?;
        let out: Vec<u8> = self
            .pixel_perm
            .iter()
            .zip(&self.np_mask)
            .map(|(&src, &flag)| np_transform4(nib[src], flag))
            .collect();
        bit_merge(&out)
    }

    pub fn invert(&self, block: &[u8]) -> Result<Vec<u8>> {
        let nib = bit_split(block, 3)?;
        self.check_len(nib.len())?;
        let mut out = vec![0u8; nib.len()];
        for (i, (&src, &flag)) in self.pixel_perm.iter().zip(&self.np_mask).enumerate() {
            out[src] = np_transform4(nib[i], flag);
        }
        bit_merge(&out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.positions() {
            return Err(Error::dim(format!(
                "block has {len} nibble positions, operations expect {}",
                self.positions()
            )));
        }
        Ok(())
    }
}

/// Applies per-block operations then an optional block-location shuffle.
///
/// `ops` holds either one shared entry or one entry per block. With a
/// shuffle, output block `i` is the transformed input block `block_perm[i]`.
pub fn pixel_apply(
    img: &Image8,
    block_size: usize,
    ops: &[LeBlockOps],
    block_perm: Option<&[usize]>,
) -> Result<Image8> {
    let mut grid = segment(img, block_size)?;
    check_ops(ops.len(), grid.len(), block_perm)?;
    let transformed = grid
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, blk)| ops[if ops.len() == 1 { 0 } else { b }].apply(blk))
        .collect::<Result<Vec<_>>>()?;
    let blocks = grid.blocks_mut();
    match block_perm {
        Some(perm) => {
            for (i, &src) in perm.iter().enumerate() {
                blocks[i] = transformed[src].clone();
            }
        }
        None => {
            for (dst, t) in blocks.iter_mut().zip(transformed) {
                *dst = t;
            }
        }
    }
    assemble(&grid)
}

pub fn pixel_unapply(
    img: &Image8,
    block_size: usize,
    ops: &[LeBlockOps],
    block_perm: Option<&[usize]>,
) -> Result<Image8> {
    let mut grid = segment(img, block_size)?;
    check_ops(ops.len(), grid.len(), block_perm)?;
    let unshuffled: Vec<Vec<u8>> = match block_perm {
        Some(perm) => {
            let inv = invert_permutation(perm);
            inv.iter().map(|&i| grid.blocks()[i].clone()).collect()
        }
        None => grid.blocks().to_vec(),
    };
    for (b, (dst, blk)) in grid.blocks_mut().iter_mut().zip(&unshuffled).enumerate() {
        *dst = ops[if ops.len() == 1 { 0 } else { b }].invert(blk)?;
    }
    assemble(&grid)
}

fn check_ops(n_ops: usize, n_blocks: usize, block_perm: Option<&[usize]>) -> Result<()> {
    if n_ops != 1 && n_ops != n_blocks {
        return Err(Error::dim(format!(
            "{n_ops} block operations for {n_blocks} blocks"
        )));
    }
    if let Some(p) = block_perm {
        if p.len() != n_blocks || !crate::keying::is_permutation(p) {
            return Err(Error::dim(format!(
                "block permutation is not a bijection on {n_blocks} blocks"
            )));
        }
    }
    Ok(())
}
