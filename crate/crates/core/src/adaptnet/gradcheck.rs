//! Central finite-difference checks of the analytic gradients.
//!
//! The numeric side only ever evaluates forward losses, so it shares no
//! code with the backward pass it validates.

use crate::domain::{FeatureMap, Image8, LabeledExample, PseudoPermMatrix};
use crate::error::Result;
use crate::exec::Exec;
use crate::keying::SubkeyStream;

use super::loss::{loss_s_grad_single, loss_s_single, loss_u, loss_u_grad, Lambdas};
use super::model::{FrontEnd, Model, ModelConfig};

pub const DELTA: f64 = 1e-5;
pub const STANDALONE_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;
/// Coordinates sampled per tensor in the end-to-end check.
const COORDS_PER_TENSOR: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub draw: u64,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], delta: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + delta;
            let up = f(&x);
            x[i] = orig - delta;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * delta)
        })
        .collect()
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s
}

pub fn check_loss_u(draws: u64, seed: u64) -> Vec<GradCheck> {
    (0..draws)
        .map(|draw| {
            let mut rng = SubkeyStream::from_seed(&seed_bytes(seed), "gradcheck-u", draw);
            let n = 2 + (draw as usize % 7);
            let x: Vec<f64> = (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let analytic = loss_u_grad(&PseudoPermMatrix::new(n, x.clone()).unwrap());
            let numeric = central_difference(
                |v| loss_u(&PseudoPermMatrix::new(n, v.to_vec()).unwrap()),
                &x,
                DELTA,
            );
            GradCheck {
                name: "loss_u".into(),
                draw,
                rel_error: relative_error(&analytic, &numeric),
                tolerance: STANDALONE_TOL,
            }
        })
        .collect()
}

pub fn check_loss_s(draws: u64, seed: u64) -> Vec<GradCheck> {
    (0..draws)
        .map(|draw| {
            let mut rng = SubkeyStream::from_seed(&seed_bytes(seed), "gradcheck-s", draw);
            let x: Vec<f64> = (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let analytic = loss_s_grad_single(&FeatureMap::new(4, 4, 2, x.clone()).unwrap());
            let numeric = central_difference(
                |v| loss_s_single(&FeatureMap::new(4, 4, 2, v.to_vec()).unwrap()),
                &x,
                DELTA,
            );
            GradCheck {
                name: "loss_s".into(),
                draw,
                rel_error: relative_error(&analytic, &numeric),
                tolerance: STANDALONE_TOL,
            }
        })
        .collect()
}

/// Toy 8x8x3 problem with randomized parameters for the end-to-end check.
pub fn toy_problem(front: FrontEnd, draw: u64, seed: u64) -> Result<(Model, Vec<LabeledExample>)> {
    let cfg = ModelConfig {
        conv1: 4,
        conv2: 4,
        ..ModelConfig::new(front, 8, 8, 3)
    };
    let mut model = Model::init(cfg, seed ^ draw.wrapping_mul(0x9e37_79b9_7f4a_7c15))?;
    let mut rng = SubkeyStream::from_seed(&seed_bytes(seed), "gradcheck-toy", draw);
    for t in &mut model.params_mut().tensors {
        if t.name == "perm.u" {
            t.data.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        } else if t.name.ends_with(".bias") {
            t.data.iter_mut().for_each(|v| *v = rng.uniform(-0.1, 0.1));
        }
    }
    let examples = (0..3)
        .map(|i| {
            let data = (0..8 * 8 * 3).map(|_| rng.below(256) as u8).collect();
            LabeledExample::new(Image8::new(8, 8, 3, data)?, i % 3, 3)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((model, examples))
}

pub fn check_end_to_end(front: FrontEnd, draws: u64, seed: u64) -> Result<Vec<GradCheck>> {
    let lambdas = Lambdas::default();
    let mut out = Vec::new();
    for draw in 0..draws {
        let (model, examples) = toy_problem(front, draw, seed)?;
        let batch: Vec<&LabeledExample> = examples.iter().collect();
        let grads = model
            .batch_loss_and_grad(&batch, lambdas, Exec::Sequential)?
            .grads
            .expect("gradient requested");

        let mut rng = SubkeyStream::from_seed(&seed_bytes(seed), "gradcheck-coords", draw);
        let mut probe = model.clone();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (ti, t) in model.params().tensors.iter().enumerate() {
            let coords: Vec<usize> = if t.len() <= COORDS_PER_TENSOR {
                (0..t.len()).collect()
            } else {
                (0..COORDS_PER_TENSOR)
                    .map(|_| rng.below(t.len() as u64) as usize)
                    .collect()
            };
            for i in coords {
                let orig = t.data[i];
                let mut eval = |v: f64| -> Result<f64> {
                    probe.params_mut().tensors[ti].data[i] = v;
                    Ok(probe.batch_loss(&batch, lambdas, Exec::Sequential)?.loss.total)
                };
                let up = eval(orig + DELTA)?;
                let down = eval(orig - DELTA)?;
                eval(orig)?;
                numeric.push((up - down) / (2.0 * DELTA));
                analytic.push(grads.tensors[ti].data[i]);
            }
        }
        out.push(GradCheck {
            name: format!("loss_total[{front}]"),
            draw,
            rel_error: relative_error(&analytic, &numeric),
            tolerance: END_TO_END_TOL,
        });
    }
    Ok(out)
}

/// Every check with `draws` random draws each.
pub fn run_all(draws: u64, seed: u64) -> Result<Vec<GradCheck>> {
    let mut all = check_loss_u(draws, seed);
    all.extend(check_loss_s(draws, seed));
    all.extend(check_end_to_end(FrontEnd::EleAdapt, draws, seed)?);
    all.extend(check_end_to_end(FrontEnd::LeAdapt, draws, seed)?);
    all.extend(check_end_to_end(FrontEnd::None, draws, seed)?);
    Ok(all)
}
