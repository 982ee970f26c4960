//! Adaptation-network layers: block-wise sub-networks, integration of block
//! features into a map, the pseudo-permutation matrix and the pixel shuffle.

use crate::domain::{FeatureMap, PseudoPermMatrix};
use crate::error::{Error, Result};

/// Parameters of one block-wise sub-network: a single convolution whose
/// kernel and stride equal the block size. The kernel is stored as `D` rows
/// of `B*B*C_in` weights; each row is laid out in the block's `(h, w, c)`
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetParams {
    pub block_size: usize,
    pub in_channels: usize,
    pub out_dim: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SubnetParams {
    pub fn new(
        block_size: usize,
        in_channels: usize,
        out_dim: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let fan_in = block_size * block_size * in_channels;
        if kernel.len() != fan_in * out_dim || bias.len() != out_dim {
            return Err(Error::dim(format!(
                "sub-network expects a {out_dim}x{fan_in} kernel and {out_dim} biases, got {} and {}",
                kernel.len(),
                bias.len()
            )));
        }
        if kernel.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: "sub-network".into(),
            });
        }
        Ok(SubnetParams {
            block_size,
            in_channels,
            out_dim,
            kernel,
            bias,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.block_size * self.block_size * self.in_channels
    }
}

/// `out = kernel * block + bias` for a row-major `out.len() x block.len()` kernel.
#[inline]
pub(crate) fn affine(kernel: &[f64], bias: &[f64], block: &[f64], out: &mut [f64]) {
    let fan_in = block.len();
    for (d, o) in out.iter_mut().enumerate() {
        let row = &kernel[d * fan_in..(d + 1) * fan_in];
        *o = bias[d] + row.iter().zip(block).map(|(w, x)| w * x).sum::<f64>();
    }
}

/// Accumulates kernel/bias gradients and returns nothing; the sub-network
/// input is never differentiated (it is the scrambled image).
#[inline]
pub(crate) fn affine_backward(
    block: &[f64],
    dout: &[f64],
    dkernel: &mut [f64],
    dbias: &mut [f64],
) {
    let fan_in = block.len();
    for (d, &g) in dout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        dbias[d] += g;
        let row = &mut dkernel[d * fan_in..(d + 1) * fan_in];
        for (w, x) in row.iter_mut().zip(block) {
            *w += g * x;
        }
    }
}

pub fn subnet_forward(block: &[f64], params: &SubnetParams) -> Result<Vec<f64>> {
    if block.len() != params.fan_in() {
        return Err(Error::dim(format!(
            "block of {} values does not match a {}x{}x{} kernel",
            block.len(),
            params.block_size,
            params.block_size,
            params.in_channels
        )));
    }
    let mut out = vec![0.0; params.out_dim];
    affine(&params.kernel, &params.bias, block, &mut out);
    Ok(out)
}

/// Places the feature vector of block `b` at grid position `b` (row-major).
pub fn integrate(features: &[Vec<f64>], rows: usize, cols: usize) -> Result<FeatureMap> {
    if features.len() != rows * cols {
        return Err(Error::dim(format!(
            "{} feature vectors for a {rows}x{cols} grid",
            features.len()
        )));
    }
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::dim("feature vectors have different lengths"));
    }
    FeatureMap::new(rows, cols, d, features.concat())
}

/// Treats the map as an `N x D` matrix `F` (one row per block position) and
/// returns `U F` in the same shape.
pub fn apply_perm_matrix(u: &PseudoPermMatrix, fm: &FeatureMap) -> Result<FeatureMap> {
    let n = fm.height * fm.width;
    if u.n() != n {
        return Err(Error::dim(format!(
            "{}x{} matrix applied to {n} block positions",
            u.n(),
            u.n()
        )));
    }
    let mut out = vec![0.0; fm.data.len()];
    matmul_rows(u.entries(), &fm.data, n, fm.channels, &mut out);
    Ok(FeatureMap {
        height: fm.height,
        width: fm.width,
        channels: fm.channels,
        data: out,
    })
}

/// `out (n x d) = u (n x n) * f (n x d)`.
pub(crate) fn matmul_rows(u: &[f64], f: &[f64], n: usize, d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let dst = &mut out[i * d..(i + 1) * d];
        for j in 0..n {
            let w = u[i * n + j];
            if w == 0.0 {
                continue;
            }
            for (o, x) in dst.iter_mut().zip(&f[j * d..(j + 1) * d]) {
                *o += w * x;
            }
        }
    }
}

/// Sub-pixel rearrangement:
/// `out[h*r + dh, w*r + dw, c] = in[h, w, c*r*r + dh*r + dw]`.
pub fn pixel_shuffle(fm: &FeatureMap, r: usize) -> Result<FeatureMap> {
    if r == 0 || fm.channels % (r * r) != 0 {
        return Err(Error::dim(format!(
            "{} channels are not divisible by r^2 = {}",
            fm.channels,
            r * r
        )));
    }
    let c_out = fm.channels / (r * r);
    let mut out = FeatureMap::zeros(fm.height * r, fm.width * r, c_out);
    for h in 0..fm.height {
        for w in 0..fm.width {
            for c in 0..c_out {
                for dh in 0..r {
                    for dw in 0..r {
                        let dst = out.index(h * r + dh, w * r + dw, c);
                        out.data[dst] = fm.at(h, w, c * r * r + dh * r + dw);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(fm: &FeatureMap, r: usize) -> Result<FeatureMap> {
    if r == 0 || fm.height % r != 0 || fm.width % r != 0 {
        return Err(Error::dim(format!(
            "{}x{} map is not divisible by r = {r}",
            fm.height, fm.width
        )));
    }
    let mut out = FeatureMap::zeros(fm.height / r, fm.width / r, fm.channels * r * r);
    for h in 0..out.height {
        for w in 0..out.width {
            for c in 0..fm.channels {
                for dh in 0..r {
                    for dw in 0..r {
                        let dst = out.index(h, w, c * r * r + dh * r + dw);
                        out.data[dst] = fm.at(h * r + dh, w * r + dw, c);
                    }
                }
            }
        }
    }
    Ok(out)
}
