//! Mini-batch training with Nesterov momentum, and evaluation.

mod optim;
mod schedule;

use std::fmt::Write as _;
use std::time::Instant;

pub use optim::{sgd_nesterov_step, Nesterov};
pub use schedule::{LrSchedule, LrStage};

use crate::adaptnet::{argmax, loss_total, loss_u, Lambdas, LossBreakdown, Model, PROB_EPS};
use crate::domain::LabeledExample;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::keying::{random_permutation, SubkeyStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub lambdas: Lambdas,
    pub seed: u64,
}

/// Starting rate of the compressed schedule. The small head has no
/// normalization layers and diverges at 0.1.
pub const DESK_BASE_LR: f64 = 0.02;

impl TrainConfig {
    /// Batch 128, momentum 0.9, default penalty weights and the three-stage
    /// schedule compressed to `epochs`, starting at [`DESK_BASE_LR`].
    pub fn desk(epochs: usize) -> Self {
        TrainConfig {
            batch_size: 128,
            epochs,
            schedule: LrSchedule::scaled(epochs, DESK_BASE_LR),
            momentum: 0.9,
            lambdas: Lambdas::default(),
            seed: 0,
        }
    }

    /// The full 300-epoch setting.
    pub fn standard() -> Self {
        TrainConfig {
            schedule: LrSchedule::standard(),
            ..Self::desk(300)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Range("batch size must be positive".into()));
        }
        if self.schedule.epochs() != self.epochs {
            return Err(Error::Range(format!(
                "schedule covers {} epochs, training runs {}",
                self.schedule.epochs(),
                self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Range(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's mini-batches, weighted by batch size.
    pub loss: LossBreakdown,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// `loss_u(U)` at the end of the epoch, for models with a `U`.
    pub u_penalty: Option<f64>,
    pub secs: f64,
}

impl EpochRecord {
    /// `epoch=.. lr=.. total=.. ce=.. u=.. s=.. train_acc=.. test_acc=.. secs=..`
    pub fn to_line(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "epoch={} lr={} total={:.10} ce={:.10} u={:.10} s={:.10} train_acc={:.6} test_acc={} secs={:.3}",
            self.epoch,
            self.lr,
            self.loss.total,
            self.loss.ce,
            self.loss.u_penalty,
            self.loss.smooth,
            self.train_acc,
            fmt_opt(self.test_acc),
            self.secs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// `loss_u(U)` before the first update.
    pub initial_u_penalty: Option<f64>,
}

impl TrainReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            writeln!(out, "{}", r.to_line()).unwrap();
        }
        out
    }

    pub fn final_u_penalty(&self) -> Option<f64> {
        self.epochs
            .last()
            .and_then(|r| r.u_penalty)
            .or(self.initial_u_penalty)
    }
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut s = [0u8; 32];
    s[..8].copy_from_slice(&seed.to_le_bytes());
    s
}

/// Trains `model` in place. Data order per epoch comes from a stream
/// derived from `cfg.seed`, so two runs with the same inputs match exactly.
pub fn train(
    model: &mut Model,
    train_set: &[LabeledExample],
    test_set: &[LabeledExample],
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.epochs > 0 && train_set.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        initial_u_penalty: model.perm_matrix().map(|u| loss_u(&u)),
    };
    let mut opt = Nesterov::new(model.params(), cfg.momentum);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.schedule.lr_at(epoch)?;
        let order = random_permutation(
            &mut SubkeyStream::from_seed(&seed_bytes(cfg.seed), "batch-order", epoch as u64),
            train_set.len(),
        )?;
        let (mut ce, mut u, mut s) = (0.0, 0.0, 0.0);
        let mut correct = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledExample> = idx.iter().map(|&i| &train_set[i]).collect();
            let out = model.batch_loss_and_grad(&batch, cfg.lambdas, exec)?;
            let grads = out.grads.expect("gradient requested");
            if !out.loss.total.is_finite() {
                return Err(Error::NonFinite {
                    tensor: grads.first_non_finite().unwrap_or("loss").to_string(),
                });
            }
            if let Some(name) = grads.first_non_finite() {
                return Err(Error::NonFinite {
                    tensor: format!("gradient of {name}"),
                });
            }
            let w = batch.len() as f64;
            ce += w * out.loss.ce;
            u += w * out.loss.u_penalty;
            s += w * out.loss.smooth;
            correct += out.correct;
            opt.step(model.params_mut(), &grads, lr)?;
            if let Some(name) = model.params().first_non_finite() {
                return Err(Error::NonFinite {
                    tensor: name.to_string(),
                });
            }
        }
        let n = train_set.len() as f64;
        let test_acc = if test_set.is_empty() {
            None
        } else {
            Some(evaluate(model, test_set, exec)?.accuracy)
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss: loss_total(ce / n, u / n, s / n, cfg.lambdas),
            train_acc: correct as f64 / n,
            test_acc,
            u_penalty: model.perm_matrix().map(|u| loss_u(&u)),
            secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        report.epochs.push(record);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean cross entropy.
    pub mean_loss: f64,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate(model: &Model, data: &[LabeledExample], exec: Exec) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let classes = model.config().classes;
    if let Some(ex) = data.iter().find(|e| e.label >= classes) {
        return Err(Error::Range(format!("label {} outside [0, {classes})", ex.label)));
    }
    let posteriors = exec
        .map(data, |ex| model.predict(&ex.image))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut correct = 0;
    let mut loss = 0.0;
    let predictions = posteriors
        .into_iter()
        .zip(data)
        .map(|(posterior, ex)| {
            let class = argmax(&posterior);
            correct += usize::from(class == ex.label);
            loss -= posterior[ex.label].max(PROB_EPS).ln();
            Prediction { class, posterior }
        })
        .collect();
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss / n,
        predictions,
    })
}
