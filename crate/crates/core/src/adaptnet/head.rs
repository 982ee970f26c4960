//! Small convolutional classifier placed after the adaptation network:
//! two `3x3 conv (same padding) -> ReLU -> 2x2 max-pool` stages followed by
//! a linear layer and softmax.
//!
//! Convolution weights are laid out `[ky][kx][c_in][c_out]`; the linear
//! layer is `[class][feature]` over the flattened `(h, w, c)` pooled map.

use crate::domain::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::dim(format!(
                "classifier input {}x{} must be a positive multiple of 4 on both axes",
                self.height, self.width
            )));
        }
        if self.in_channels == 0 || self.conv1 == 0 || self.conv2 == 0 || self.classes < 2 {
            return Err(Error::dim("classifier widths must be positive with >= 2 classes"));
        }
        Ok(())
    }

    pub fn fc_inputs(&self) -> usize {
        (self.height / 4) * (self.width / 4) * self.conv2
    }

    /// `(name, dims)` for every head tensor, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("head.conv1.weight", vec![3, 3, self.in_channels, self.conv1]),
            ("head.conv1.bias", vec![self.conv1]),
            ("head.conv2.weight", vec![3, 3, self.conv1, self.conv2]),
            ("head.conv2.bias", vec![self.conv2]),
            ("head.fc.weight", vec![self.classes, self.fc_inputs()]),
            ("head.fc.bias", vec![self.classes]),
        ]
    }
}

/// Borrowed view of the six head tensors.
pub(crate) struct HeadParams<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
    pub wf: &'a [f64],
    pub bf: &'a [f64],
}

pub(crate) struct HeadGrads<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
    pub wf: &'a mut [f64],
    pub bf: &'a mut [f64],
}

pub(crate) struct HeadCache {
    a1: FeatureMap,
    idx1: Vec<usize>,
    p1: FeatureMap,
    a2: FeatureMap,
    idx2: Vec<usize>,
    p2: FeatureMap,
    pub probs: Vec<f64>,
}

pub(crate) fn conv3x3(input: &FeatureMap, w: &[f64], b: &[f64], c_out: usize) -> FeatureMap {
    let (h, wd, c_in) = (input.height, input.width, input.channels);
    let mut out = FeatureMap::zeros(h, wd, c_out);
    for y in 0..h {
        for x in 0..wd {
            let o = out.index(y, x, 0);
            let dst = &mut out.data[o..o + c_out];
            dst.copy_from_slice(b);
            for ky in 0..3 {
                let iy = y + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x + kx;
                    if ix < 1 || ix > wd {
                        continue;
                    }
                    let src = input.index(iy - 1, ix - 1, 0);
                    for ci in 0..c_in {
                        let v = input.data[src + ci];
                        let row = ((ky * 3 + kx) * c_in + ci) * c_out;
                        for (d, wv) in dst.iter_mut().zip(&w[row..row + c_out]) {
                            *d += v * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv3x3_backward(
    input: &FeatureMap,
    w: &[f64],
    dout: &FeatureMap,
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let (h, wd, c_in) = (input.height, input.width, input.channels);
    let c_out = dout.channels;
    for y in 0..h {
        for x in 0..wd {
            let o = dout.index(y, x, 0);
            let g = &dout.data[o..o + c_out];
            for (acc, gv) in db.iter_mut().zip(g) {
                *acc += gv;
            }
            for ky in 0..3 {
                let iy = y + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x + kx;
                    if ix < 1 || ix > wd {
                        continue;
                    }
                    let src = input.index(iy - 1, ix - 1, 0);
                    for ci in 0..c_in {
                        let v = input.data[src + ci];
                        let row = ((ky * 3 + kx) * c_in + ci) * c_out;
                        for (dwv, gv) in dw[row..row + c_out].iter_mut().zip(g) {
                            *dwv += v * gv;
                        }
                        if let Some(din) = din.as_deref_mut() {
                            din[src + ci] += w[row..row + c_out]
                                .iter()
                                .zip(g)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                }
            }
        }
    }
}

/// `maxpool2x2(relu(a))`, returning the pooled map and, for every pooled
/// entry, the flat index in `a` of its window maximum.
pub(crate) fn relu_maxpool(a: &FeatureMap) -> (FeatureMap, Vec<usize>) {
    let (h2, w2, c) = (a.height / 2, a.width / 2, a.channels);
    let mut out = FeatureMap::zeros(h2, w2, c);
    let mut idx = vec![0; h2 * w2 * c];
    for y in 0..h2 {
        for x in 0..w2 {
            for ch in 0..c {
                let mut best = a.index(2 * y, 2 * x, ch);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = a.index(2 * y + dy, 2 * x + dx, ch);
                    if a.data[i] > a.data[best] {
                        best = i;
                    }
                }
                let k = out.index(y, x, ch);
                out.data[k] = a.data[best].max(0.0);
                idx[k] = best;
            }
        }
    }
    (out, idx)
}

fn relu_maxpool_backward(a: &FeatureMap, idx: &[usize], dpooled: &[f64]) -> FeatureMap {
    let mut da = FeatureMap::zeros(a.height, a.width, a.channels);
    for (&src, &g) in idx.iter().zip(dpooled) {
        if a.data[src] > 0.0 {
            da.data[src] += g;
        }
    }
    da
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn head_forward(cfg: &HeadConfig, p: &HeadParams<'_>, x: &FeatureMap) -> HeadCache {
    let a1 = conv3x3(x, p.w1, p.b1, cfg.conv1);
    let (p1, idx1) = relu_maxpool(&a1);
    let a2 = conv3x3(&p1, p.w2, p.b2, cfg.conv2);
    let (p2, idx2) = relu_maxpool(&a2);
    let f = cfg.fc_inputs();
    let logits: Vec<f64> = (0..cfg.classes)
        .map(|k| {
            p.bf[k]
                + p.wf[k * f..(k + 1) * f]
                    .iter()
                    .zip(&p2.data)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect();
    HeadCache {
        a1,
        idx1,
        p1,
        a2,
        idx2,
        p2,
        probs: softmax(&logits),
    }
}

/// Backpropagates `dlogits` through the head, accumulating parameter
/// gradients and, when `dx` is given, the gradient with respect to the
/// head's input map.
pub(crate) fn head_backward(
    cfg: &HeadConfig,
    p: &HeadParams<'_>,
    x: &FeatureMap,
    cache: &HeadCache,
    dlogits: &[f64],
    g: &mut HeadGrads<'_>,
    dx: Option<&mut [f64]>,
) {
    let f = cfg.fc_inputs();
    let mut dp2 = vec![0.0; f];
    for (k, &dz) in dlogits.iter().enumerate() {
        g.bf[k] += dz;
        let wrow = &p.wf[k * f..(k + 1) * f];
        let grow = &mut g.wf[k * f..(k + 1) * f];
        for i in 0..f {
            grow[i] += dz * cache.p2.data[i];
            dp2[i] += dz * wrow[i];
        }
    }
    let da2 = relu_maxpool_backward(&cache.a2, &cache.idx2, &dp2);
    let mut dp1 = vec![0.0; cache.p1.data.len()];
    conv3x3_backward(&cache.p1, p.w2, &da2, g.w2, g.b2, Some(&mut dp1));
    let da1 = relu_maxpool_backward(&cache.a1, &cache.idx1, &dp1);
    conv3x3_backward(x, p.w1, &da1, g.w1, g.b1, dx);
}
