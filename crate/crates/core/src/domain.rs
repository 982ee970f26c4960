//! Shared domain types: 8-bit images, block grids, keys, feature maps and the
//! pseudo-permutation matrix.
//!
//! All pixel data is stored row-major in `(h, w, c)` order. Blocks of a
//! [`BlockGrid`] are ordered row-major over the block grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An `height x width x channels` grid of 8-bit intensities.
#[derive(Clone, PartialEq, Eq)]
pub struct Image8 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Image8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Image8({}x{}x{})",
            self.height, self.width, self.channels
        )
    }
}

impl Image8 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::dim(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("empty image {height}x{width}")));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::dim(format!(
                "data length {} does not match {height}x{width}x{channels} = {expected}",
                data.len()
            )));
        }
        Ok(Image8 {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize, c: usize) -> u8 {
        self.data[self.index(h, w, c)]
    }
}

/// An image cut into `rows x cols` square blocks of `block_size` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    block_size: usize,
    rows: usize,
    cols: usize,
    channels: usize,
    blocks: Vec<Vec<u8>>,
}

impl BlockGrid {
    pub fn new(
        block_size: usize,
        rows: usize,
        cols: usize,
        channels: usize,
        blocks: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if block_size == 0 || rows == 0 || cols == 0 {
            return Err(Error::dim("block grid with a zero extent"));
        }
        if blocks.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} blocks do not fill a {rows}x{cols} grid",
                blocks.len()
            )));
        }
        let per_block = block_size * block_size * channels;
        if let Some((i, b)) = blocks.iter().enumerate().find(|(_, b)| b.len() != per_block) {
            return Err(Error::dim(format!(
                "block {i} has {} entries, expected {per_block}",
                b.len()
            )));
        }
        Ok(BlockGrid {
            block_size,
            rows,
            cols,
            channels,
            blocks,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of blocks, `N = rows * cols`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<u8>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<u8>] {
        &mut self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<u8>> {
        self.blocks
    }
}

/// Cut `img` into `block_size x block_size` blocks.
pub fn segment(img: &Image8, block_size: usize) -> Result<BlockGrid> {
    if block_size == 0 {
        return Err(Error::dim("block size must be positive"));
    }
    if img.height % block_size != 0 {
        return Err(Error::dim(format!(
            "block size {block_size} does not divide image height {}",
            img.height
        )));
    }
    if img.width % block_size != 0 {
        return Err(Error::dim(format!(
            "block size {block_size} does not divide image width {}",
            img.width
        )));
    }
    let rows = img.height / block_size;
    let cols = img.width / block_size;
    let row_len = block_size * img.channels;
    let mut blocks = Vec::with_capacity(rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let mut block = Vec::with_capacity(block_size * row_len);
            for dh in 0..block_size {
                let start = img.index(br * block_size + dh, bc * block_size, 0);
                block.extend_from_slice(&img.data[start..start + row_len]);
            }
            blocks.push(block);
        }
    }
    BlockGrid::new(block_size, rows, cols, img.channels, blocks)
}

/// Concatenate the blocks of `grid` back into an image.
pub fn assemble(grid: &BlockGrid) -> Result<Image8> {
    let b = grid.block_size;
    let height = grid.rows * b;
    let width = grid.cols * b;
    let row_len = b * grid.channels;
    let mut data = vec![0u8; height * width * grid.channels];
    for (i, block) in grid.blocks.iter().enumerate() {
        if block.len() != b * row_len {
            return Err(Error::dim(format!("block {i} has inconsistent shape")));
        }
        let (br, bc) = (i / grid.cols, i % grid.cols);
        for dh in 0..b {
            let start = ((br * b + dh) * width + bc * b) * grid.channels;
            data[start..start + row_len].copy_from_slice(&block[dh * row_len..(dh + 1) * row_len]);
        }
    }
    Image8::new(height, width, grid.channels, data)
}

/// The three scrambling schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeId {
    Le,
    Etc,
    Ele,
}

impl SchemeId {
    pub const ALL: [SchemeId; 3] = [SchemeId::Le, SchemeId::Etc, SchemeId::Ele];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Le => "LE",
            SchemeId::Etc => "ETC",
            SchemeId::Ele => "ELE",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LE" => Ok(SchemeId::Le),
            "ETC" => Ok(SchemeId::Etc),
            "ELE" => Ok(SchemeId::Ele),
            _ => Err(Error::Scheme(s.to_string())),
        }
    }
}

/// Scheme, block size and a 256-bit master seed. Every random choice made by
/// a scramble is derived from these three values.
#[derive(Clone, PartialEq, Eq)]
pub struct ScrambleKey {
    pub scheme: SchemeId,
    pub block_size: usize,
    pub master_seed: [u8; 32],
}

// The seed is deliberately left out.
impl fmt::Debug for ScrambleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScrambleKey")
            .field("scheme", &self.scheme)
            .field("block_size", &self.block_size)
            .finish_non_exhaustive()
    }
}

impl ScrambleKey {
    pub fn new(scheme: SchemeId, block_size: usize, master_seed: [u8; 32]) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Range("block size must be positive".into()));
        }
        Ok(ScrambleKey {
            scheme,
            block_size,
            master_seed,
        })
    }

    /// Convenience constructor expanding a `u64` into a master seed.
    pub fn from_u64(scheme: SchemeId, block_size: usize, seed: u64) -> Result<Self> {
        let mut master = [0u8; 32];
        master[..8].copy_from_slice(&seed.to_le_bytes());
        Self::new(scheme, block_size, master)
    }
}

/// Real-valued `height x width x channels` map, row-major `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "feature data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "feature map".into(),
            });
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn at(&self, h: usize, w: usize, c: usize) -> f64 {
        self.data[self.index(h, w, c)]
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn from_image(img: &Image8) -> Self {
        FeatureMap {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
            data: img.data().iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }
}

/// Square real matrix `U` applied to block positions. Entries are not
/// constrained to be non-negative or stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPermMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl PseudoPermMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDomain("pseudo-permutation matrix of size 0"));
        }
        if entries.len() != n * n {
            return Err(Error::dim(format!(
                "{} entries do not form a {n}x{n} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "pseudo-permutation matrix".into(),
            });
        }
        Ok(PseudoPermMatrix { n, entries })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        PseudoPermMatrix { n, entries }
    }

    /// The 0/1 matrix with `P[i][perm[i]] = 1`, so `(P F)_i = F_{perm[i]}`.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut entries = vec![0.0; n * n];
        for (i, &j) in perm.iter().enumerate() {
            if j >= n {
                return Err(Error::Range(format!("permutation entry {j} >= {n}")));
            }
            entries[i * n + j] = 1.0;
        }
        Self::new(n, entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub image: Image8,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(image: Image8, label: usize, num_classes: usize) -> Result<Self> {
        if label >= num_classes {
            return Err(Error::Range(format!(
                "label {label} outside [0, {num_classes})"
            )));
        }
        Ok(LabeledExample { image, label })
    }
}
