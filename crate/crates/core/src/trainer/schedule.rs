use crate::error::{Error, Result};

/// Learning rate for epochs `start..end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrStage {
    pub start: usize,
    pub end: usize,
    pub rate: f64,
}

/// Piecewise-constant learning rate whose stages partition `0..epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    stages: Vec<LrStage>,
}

impl LrSchedule {
    pub fn new(stages: Vec<LrStage>) -> Result<Self> {
        let mut next = 0;
        for s in &stages {
            if s.start != next || s.end <= s.start {
                return Err(Error::Range(format!(
                    "stage {}..{} does not continue a partition at epoch {next}",
                    s.start, s.end
                )));
            }
            if !(s.rate > 0.0 && s.rate.is_finite()) {
                return Err(Error::Range(format!("learning rate {} must be positive", s.rate)));
            }
            next = s.end;
        }
        Ok(LrSchedule { stages })
    }

    /// 0.1 for epochs 0-150, 0.01 for 150-225, 0.001 for 225-300.
    pub fn standard() -> Self {
        Self::scaled(300, 0.1)
    }

    /// The three-stage decay compressed to `epochs`: `base` for the first
    /// half, `base / 10` up to three quarters, `base / 100` for the rest.
    /// Empty stages are dropped.
    pub fn scaled(epochs: usize, base: f64) -> Self {
        let cuts = [0, epochs / 2, epochs * 3 / 4, epochs];
        let stages = [base, base / 10.0, base / 100.0]
            .iter()
            .enumerate()
            .filter(|(i, _)| cuts[i + 1] > cuts[*i])
            .map(|(i, &rate)| LrStage {
                start: cuts[i],
                end: cuts[i + 1],
                rate,
            })
            .collect();
        LrSchedule { stages }
    }

    /// Parses `start:rate,start:rate,...` covering `0..epochs`.
    pub fn parse(spec: &str, epochs: usize) -> Result<Self> {
        let mut points = Vec::new();
        for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
            let (a, b) = part.split_once(':').ok_or_else(|| {
                Error::Range(format!("schedule entry {part:?} is not `epoch:rate`"))
            })?;
            let start: usize = a
                .trim()
                .parse()
                .map_err(|_| Error::Range(format!("bad epoch in {part:?}")))?;
            let rate: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::Range(format!("bad rate in {part:?}")))?;
            points.push((start, rate));
        }
        let stages = points
            .iter()
            .enumerate()
            .map(|(i, &(start, rate))| LrStage {
                start,
                end: points.get(i + 1).map_or(epochs, |p| p.0),
                rate,
            })
            .filter(|s| s.start < epochs)
            .collect();
        Self::new(stages)
    }

    pub fn epochs(&self) -> usize {
        self.stages.last().map_or(0, |s| s.end)
    }

    pub fn stages(&self) -> &[LrStage] {
        &self.stages
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        self.stages
            .iter()
            .find(|s| s.start <= epoch && epoch < s.end)
            .map(|s| s.rate)
            .ok_or_else(|| {
                Error::Range(format!(
                    "epoch {epoch} outside the {}-epoch schedule",
                    self.epochs()
                ))
            })
    }
}
