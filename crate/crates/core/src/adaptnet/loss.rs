//! Training objective: cross entropy, the L1-2 sparsity penalty on the
//! pseudo-permutation matrix, and the spatial smoothness penalty on the
//! adaptation network's feature map.

use crate::domain::{FeatureMap, PseudoPermMatrix};
use crate::error::{Error, Result};

/// Probability floor used inside the logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub u: f64,
    pub s: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas { u: 0.001, s: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub u_penalty: f64,
    pub smooth: f64,
    pub lambdas: Lambdas,
}

impl LossBreakdown {
    /// Recomputes the weighted sum from the components.
    pub fn recombined(&self) -> f64 {
        self.ce + self.lambdas.u * self.u_penalty + self.lambdas.s * self.smooth
    }
}

pub fn loss_total(ce: f64, u_penalty: f64, smooth: f64, lambdas: Lambdas) -> LossBreakdown {
    LossBreakdown {
        total: ce + lambdas.u * u_penalty + lambdas.s * smooth,
        ce,
        u_penalty,
        smooth,
        lambdas,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeLoss {
    pub value: f64,
    /// Set when some target-weighted probability was below [`PROB_EPS`].
    pub clamped: bool,
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut t = vec![0.0; classes];
    t[label] = 1.0;
    t
}

/// Mean over samples of `-sum_k t[m][k] * ln p[m][k]`.
pub fn loss_ce(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<CeLoss> {
    if probs.is_empty() {
        return Err(Error::Domain("cross entropy of an empty batch".into()));
    }
    if probs.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} probability rows for {} targets",
            probs.len(),
            targets.len()
        )));
    }
    let mut clamped = false;
    let mut sum = 0.0;
    for (m, (p, t)) in probs.iter().zip(targets).enumerate() {
        if p.len() != t.len() {
            return Err(Error::dim(format!("row {m}: {} classes vs {}", p.len(), t.len())));
        }
        let row_sum: f64 = p.iter().sum();
        if (row_sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "row {m} of posteriors sums to {row_sum}"
            )));
        }
        for (&pk, &tk) in p.iter().zip(t) {
            if tk == 0.0 {
                continue;
            }
            if pk < PROB_EPS {
                clamped = true;
            }
            sum -= tk * pk.max(PROB_EPS).ln();
        }
    }
    Ok(CeLoss {
        value: sum / probs.len() as f64,
        clamped,
    })
}

fn l1_minus_l2(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let l1: f64 = values.clone().map(f64::abs).sum();
    let l2 = values.map(|v| v * v).sum::<f64>().sqrt();
    l1 - l2
}

/// `(1/N^2) * [sum over rows of (L1 - L2) + sum over columns of (L1 - L2)]`.
pub fn loss_u(u: &PseudoPermMatrix) -> f64 {
    let n = u.n();
    let mut total = 0.0;
    for i in 0..n {
        total += l1_minus_l2((0..n).map(|j| u.get(i, j)));
        total += l1_minus_l2((0..n).map(|j| u.get(j, i)));
    }
    total / (n * n) as f64
}

/// Gradient of [`loss_u`]. Uses `sign(0) = 0` and a zero L2 term for
/// all-zero rows or columns.
pub fn loss_u_grad(u: &PseudoPermMatrix) -> Vec<f64> {
    let n = u.n();
    let scale = 1.0 / (n * n) as f64;
    let row_norm: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| u.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let col_norm: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| u.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut grad = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = u.get(i, j);
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            let mut g = 2.0 * sign;
            if row_norm[i] > 0.0 {
                g -= v / row_norm[i];
            }
            if col_norm[j] > 0.0 {
                g -= v / col_norm[j];
            }
            grad[i * n + j] = g * scale;
        }
    }
    grad
}

/// Smoothness penalty of a single map: mean squared horizontal forward
/// difference plus mean squared vertical forward difference. An axis of
/// length one contributes zero.
pub fn loss_s_single(fm: &FeatureMap) -> f64 {
    let (h, w, c) = (fm.height, fm.width, fm.channels);
    let mut horiz = 0.0;
    let mut vert = 0.0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = fm.at(y, x, ch);
                if x + 1 < w {
                    horiz += (fm.at(y, x + 1, ch) - v).powi(2);
                }
                if y + 1 < h {
                    vert += (fm.at(y + 1, x, ch) - v).powi(2);
                }
            }
        }
    }
    let mut total = 0.0;
    if w > 1 && c > 0 {
        total += horiz / (h * (w - 1) * c) as f64;
    }
    if h > 1 && c > 0 {
        total += vert / ((h - 1) * w * c) as f64;
    }
    total
}

pub fn loss_s_grad_single(fm: &FeatureMap) -> Vec<f64> {
    let (h, w, c) = (fm.height, fm.width, fm.channels);
    let mut grad = vec![0.0; fm.data.len()];
    let hs = if w > 1 { 2.0 / (h * (w - 1) * c) as f64 } else { 0.0 };
    let vs = if h > 1 { 2.0 / ((h - 1) * w * c) as f64 } else { 0.0 };
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let i = fm.index(y, x, ch);
                let v = fm.data[i];
                if x + 1 < w {
                    let j = fm.index(y, x + 1, ch);
                    let d = hs * (fm.data[j] - v);
                    grad[j] += d;
                    grad[i] -= d;
                }
                if y + 1 < h {
                    let j = fm.index(y + 1, x, ch);
                    let d = vs * (fm.data[j] - v);
                    grad[j] += d;
                    grad[i] -= d;
                }
            }
        }
    }
    grad
}

/// Mean of [`loss_s_single`] over the samples (0 for an empty slice).
pub fn loss_s(fms: &[FeatureMap]) -> f64 {
    if fms.is_empty() {
        return 0.0;
    }
    fms.iter().map(loss_s_single).sum::<f64>() / fms.len() as f64
}
