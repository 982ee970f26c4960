//! End-to-end model: optional adaptation network in front of the classifier
//! head, with hand-derived backward pass.
//!
//! Adaptation network pipeline for an `H x W` image with block size `B`:
//! segment into `N` blocks, run block `b` through sub-network `b` (ELE
//! mode) or the single shared sub-network (LE mode), integrate the `N`
//! feature vectors of length `D = C_f * B^2` into a grid, multiply by the
//! pseudo-permutation matrix `U` (ELE mode only), then pixel-shuffle with
//! `r = B` back to `H x W x C_f`.

use std::fmt;
use std::str::FromStr;

use crate::domain::{segment, FeatureMap, Image8, LabeledExample, PseudoPermMatrix};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::keying::SubkeyStream;
use crate::scramble::bit_split;

use super::head::{head_backward, head_forward, HeadCache, HeadConfig, HeadGrads, HeadParams};
use super::layers::{affine, affine_backward, matmul_rows, pixel_shuffle, pixel_unshuffle};
use super::loss::{
    loss_s_grad_single, loss_s_single, loss_total, loss_u, loss_u_grad, Lambdas, LossBreakdown,
    PROB_EPS,
};
use super::params::{ParamSet, Tensor};

/// Samples per gradient chunk. Chunks are reduced in order, so results do
/// not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrontEnd {
    /// Classifier only.
    None,
    /// One sub-network shared by all blocks, no permutation matrix.
    LeAdapt,
    /// One sub-network per block plus the pseudo-permutation matrix.
    EleAdapt,
}

impl FrontEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            FrontEnd::None => "none",
            FrontEnd::LeAdapt => "le",
            FrontEnd::EleAdapt => "ele",
        }
    }
}

impl fmt::Display for FrontEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FrontEnd {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FrontEnd::None),
            "le" | "le-adapt" => Ok(FrontEnd::LeAdapt),
            "ele" | "ele-adapt" => Ok(FrontEnd::EleAdapt),
            _ => Err(Error::Domain(format!(
                "unknown front end {s:?} (expected none, le or ele)"
            ))),
        }
    }
}

/// What the block-wise sub-networks see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubnetInput {
    /// The 6-channel nibble split of the block, scaled by 1/15.
    Nibbles,
    /// Raw intensities scaled by 1/255.
    Intensities,
}

impl SubnetInput {
    pub fn as_str(self) -> &'static str {
        match self {
            SubnetInput::Nibbles => "nibbles",
            SubnetInput::Intensities => "intensities",
        }
    }
}

impl FromStr for SubnetInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nibbles" => Ok(SubnetInput::Nibbles),
            "intensities" => Ok(SubnetInput::Intensities),
            _ => Err(Error::Domain(format!("unknown sub-network input {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub front: FrontEnd,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub block_size: usize,
    pub feature_channels: usize,
    pub subnet_input: SubnetInput,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

impl ModelConfig {
    /// Defaults: RGB input, `B = 4`, `C_f = 3`, nibble sub-network input,
    /// head widths 16 and 32.
    pub fn new(front: FrontEnd, height: usize, width: usize, classes: usize) -> Self {
        ModelConfig {
            front,
            height,
            width,
            channels: 3,
            block_size: 4,
            feature_channels: 3,
            subnet_input: SubnetInput::Nibbles,
            conv1: 16,
            conv2: 32,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.front != FrontEnd::None {
            let b = self.block_size;
            if b == 0 || self.height % b != 0 || self.width % b != 0 {
                return Err(Error::dim(format!(
                    "block size {b} does not divide the {}x{} input",
                    self.height, self.width
                )));
            }
            if self.feature_channels == 0 {
                return Err(Error::dim("feature channels must be positive"));
            }
            if self.subnet_input == SubnetInput::Nibbles && self.channels != 3 {
                return Err(Error::dim("nibble sub-network input needs RGB images"));
            }
        }
        self.head_config().validate()
    }

    pub fn has_adapter(&self) -> bool {
        self.front != FrontEnd::None
    }

    pub fn has_perm_matrix(&self) -> bool {
        self.front == FrontEnd::EleAdapt
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.block_size, self.width / self.block_size)
    }

    /// Number of blocks `N`.
    pub fn blocks(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn subnet_in_channels(&self) -> usize {
        match self.subnet_input {
            SubnetInput::Nibbles => 2 * self.channels,
            SubnetInput::Intensities => self.channels,
        }
    }

    pub fn subnet_fan_in(&self) -> usize {
        self.block_size * self.block_size * self.subnet_in_channels()
    }

    /// Sub-network output length `D = C_f * B^2`.
    pub fn subnet_out(&self) -> usize {
        self.feature_channels * self.block_size * self.block_size
    }

    pub fn subnets(&self) -> usize {
        match self.front {
            FrontEnd::None => 0,
            FrontEnd::LeAdapt => 1,
            FrontEnd::EleAdapt => self.blocks(),
        }
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            height: self.height,
            width: self.width,
            in_channels: if self.has_adapter() {
                self.feature_channels
            } else {
                self.channels
            },
            conv1: self.conv1,
            conv2: self.conv2,
            classes: self.classes,
        }
    }

    pub fn to_meta(&self) -> String {
        format!(
            "front={}\nheight={}\nwidth={}\nchannels={}\nblock_size={}\nfeature_channels={}\nsubnet_input={}\nconv1={}\nconv2={}\nclasses={}\n",
            self.front,
            self.height,
            self.width,
            self.channels,
            self.block_size,
            self.feature_channels,
            self.subnet_input.as_str(),
            self.conv1,
            self.conv2,
            self.classes
        )
    }

    pub fn from_meta(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(FrontEnd::None, 0, 0, 0);
        let mut seen = 0usize;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |field: &str, msg: &str| Error::Parse {
                line: i + 1,
                field: field.to_string(),
                msg: msg.to_string(),
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(line, "expected `field=value`"))?;
            let num = || v.parse::<usize>().map_err(|_| perr(k, "not an integer"));
            match k {
                "front" => cfg.front = v.parse()?,
                "height" => cfg.height = num()?,
                "width" => cfg.width = num()?,
                "channels" => cfg.channels = num()?,
                "block_size" => cfg.block_size = num()?,
                "feature_channels" => cfg.feature_channels = num()?,
                "subnet_input" => cfg.subnet_input = v.parse()?,
                "conv1" => cfg.conv1 = num()?,
                "conv2" => cfg.conv2 = num()?,
                "classes" => cfg.classes = num()?,
                _ => return Err(perr(k, "unknown field")),
            }
            seen += 1;
        }
        if seen != 10 {
            return Err(Error::Parse {
                line: 0,
                field: "model".into(),
                msg: format!("expected 10 model fields, found {seen}"),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Model configuration plus its trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
}

/// Output of a forward pass over one image.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub posteriors: Vec<f64>,
    /// The adaptation network's feature map, or the scaled image when there
    /// is no adaptation network.
    pub features: FeatureMap,
}

struct SampleCache {
    block_inputs: Vec<f64>,
    integrated: Vec<f64>,
    adapted: FeatureMap,
    head: HeadCache,
}

impl Model {
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        for k in 0..config.subnets() {
            shapes.push((
                format!("subnet.{k}.kernel"),
                vec![config.subnet_out(), config.subnet_fan_in()],
            ));
            shapes.push((format!("subnet.{k}.bias"), vec![config.subnet_out()]));
        }
        if config.has_perm_matrix() {
            let n = config.blocks();
            shapes.push(("perm.u".to_string(), vec![n, n]));
        }
        for (name, dims) in config.head_config().tensor_shapes() {
            shapes.push((name.to_string(), dims));
        }
        shapes
    }

    /// Randomly initialized model: Glorot-uniform sub-network and linear
    /// weights, He-uniform convolutions, zero biases and `U = I + noise`
    /// with noise uniform in `[-0.01, 0.01]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = SubkeyStream::from_seed(&seed_bytes, "model-init", 0);
        let mut tensors = Vec::new();
        for (name, dims) in Self::expected_shapes(&config) {
            let mut t = Tensor::zeros(name.clone(), &dims);
            if name == "perm.u" {
                let n = dims[0];
                for (k, v) in t.data.iter_mut().enumerate() {
                    let eye = if k / n == k % n { 1.0 } else { 0.0 };
                    *v = eye + rng.uniform(-0.01, 0.01);
                }
            } else if !name.ends_with(".bias") {
                let limit = if name.starts_with("head.conv") {
                    (6.0 / (dims[0] * dims[1] * dims[2]) as f64).sqrt()
                } else {
                    (6.0 / (dims[0] + dims[1]) as f64).sqrt()
                };
                t.data.iter_mut().for_each(|v| *v = rng.uniform(-limit, limit));
            }
            tensors.push(t);
        }
        Ok(Model {
            config,
            params: ParamSet { tensors },
        })
    }

    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let shapes = Self::expected_shapes(&config);
        if shapes.len() != params.tensors.len()
            || shapes
                .iter()
                .zip(&params.tensors)
                .any(|((n, d), t)| *n != t.name || *d != t.dims || t.data.len() != d.iter().product())
        {
            return Err(Error::dim("tensors do not match the model configuration"));
        }
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite {
                tensor: name.to_string(),
            });
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn perm_index(&self) -> Option<usize> {
        self.config
            .has_perm_matrix()
            .then(|| 2 * self.config.subnets())
    }

    fn head_base(&self) -> usize {
        2 * self.config.subnets() + usize::from(self.config.has_perm_matrix())
    }

    /// The pseudo-permutation matrix (ELE mode only).
    pub fn perm_matrix(&self) -> Option<PseudoPermMatrix> {
        self.perm_index().map(|i| {
            PseudoPermMatrix::new(self.config.blocks(), self.params.tensors[i].data.clone())
                .expect("layout checked at construction")
        })
    }

    fn head_params(&self) -> HeadParams<'_> {
        let t = &self.params.tensors[self.head_base()..];
        HeadParams {
            w1: &t[0].data,
            b1: &t[1].data,
            w2: &t[2].data,
            b2: &t[3].data,
            wf: &t[4].data,
            bf: &t[5].data,
        }
    }

    fn check_image(&self, img: &Image8) -> Result<()> {
        let c = &self.config;
        if (img.height(), img.width(), img.channels()) != (c.height, c.width, c.channels) {
            return Err(Error::dim(format!(
                "model expects {}x{}x{} images, got {}x{}x{}",
                c.height,
                c.width,
                c.channels,
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        Ok(())
    }

    fn block_inputs(&self, img: &Image8) -> Result<Vec<f64>> {
        let grid = segment(img, self.config.block_size)?;
        let mut out = Vec::with_capacity(grid.len() * self.config.subnet_fan_in());
        for block in grid.blocks() {
            match self.config.subnet_input {
                SubnetInput::Nibbles => out.extend(
                    bit_split(block, grid.channels())?
                        .into_iter()
                        .map(|v| f64::from(v) / 15.0),
                ),
                SubnetInput::Intensities => {
                    out.extend(block.iter().map(|&v| f64::from(v) / 255.0))
                }
            }
        }
        Ok(out)
    }

    fn forward_cached(&self, img: &Image8) -> Result<SampleCache> {
        self.check_image(img)?;
        let cfg = &self.config;
        let (block_inputs, integrated, adapted) = if cfg.has_adapter() {
            let (rows, cols) = cfg.grid();
            let n = rows * cols;
            let (p, d) = (cfg.subnet_fan_in(), cfg.subnet_out());
            let inputs = self.block_inputs(img)?;
            let mut feats = vec![0.0; n * d];
            for b in 0..n {
                let k = if cfg.front == FrontEnd::EleAdapt { b } else { 0 };
                affine(
                    &self.params.tensors[2 * k].data,
                    &self.params.tensors[2 * k + 1].data,
                    &inputs[b * p..(b + 1) * p],
                    &mut feats[b * d..(b + 1) * d],
                );
            }
            let mixed = match self.perm_index() {
                Some(ui) => {
                    let mut out = vec![0.0; n * d];
                    matmul_rows(&self.params.tensors[ui].data, &feats, n, d, &mut out);
                    out
                }
                None => feats.clone(),
            };
            let grid_map = FeatureMap {
                height: rows,
                width: cols,
                channels: d,
                data: mixed,
            };
            let adapted = pixel_shuffle(&grid_map, cfg.block_size)?;
            (inputs, feats, adapted)
        } else {
            (Vec::new(), Vec::new(), FeatureMap::from_image(img))
        };
        let head = head_forward(&cfg.head_config(), &self.head_params(), &adapted);
        Ok(SampleCache {
            block_inputs,
            integrated,
            adapted,
            head,
        })
    }

    /// Backward pass for one sample of the objective
    /// `ce_weight * CE + smooth_weight * L_s`, accumulated into `grads`.
    fn backward_cached(
        &self,
        cache: &SampleCache,
        label: usize,
        ce_weight: f64,
        smooth_weight: f64,
        grads: &mut ParamSet,
    ) {
        let cfg = &self.config;
        let head_cfg = cfg.head_config();
        let dlogits: Vec<f64> = cache
            .head
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| ce_weight * (p - if k == label { 1.0 } else { 0.0 }))
            .collect();

        let base = self.head_base();
        let (front, head) = grads.tensors.split_at_mut(base);
        let [w1, b1, w2, b2, wf, bf] = head else {
            unreachable!("head has six tensors")
        };
        let mut hg = HeadGrads {
            w1: &mut w1.data,
            b1: &mut b1.data,
            w2: &mut w2.data,
            b2: &mut b2.data,
            wf: &mut wf.data,
            bf: &mut bf.data,
        };
        if !cfg.has_adapter() {
            head_backward(
                &head_cfg,
                &self.head_params(),
                &cache.adapted,
                &cache.head,
                &dlogits,
                &mut hg,
                None,
            );
            return;
        }

        let mut dx = if smooth_weight != 0.0 {
            let mut g = loss_s_grad_single(&cache.adapted);
            g.iter_mut().for_each(|v| *v *= smooth_weight);
            g
        } else {
            vec![0.0; cache.adapted.data.len()]
        };
        head_backward(
            &head_cfg,
            &self.head_params(),
            &cache.adapted,
            &cache.head,
            &dlogits,
            &mut hg,
            Some(&mut dx),
        );

        let dmap = FeatureMap {
            height: cfg.height,
            width: cfg.width,
            channels: cfg.feature_channels,
            data: dx,
        };
        let dmixed = pixel_unshuffle(&dmap, cfg.block_size)
            .expect("shape fixed by the forward pass")
            .data;
        let n = cfg.blocks();
        let (p, d) = (cfg.subnet_fan_in(), cfg.subnet_out());

        let dfeat = match self.perm_index() {
            Some(ui) => {
                let u = &self.params.tensors[ui].data;
                let du = &mut front[ui].data;
                let mut dfeat = vec![0.0; n * d];
                for i in 0..n {
                    let gi = &dmixed[i * d..(i + 1) * d];
                    for j in 0..n {
                        let fj = &cache.integrated[j * d..(j + 1) * d];
                        du[i * n + j] += gi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>();
                        let w = u[i * n + j];
                        for (o, g) in dfeat[j * d..(j + 1) * d].iter_mut().zip(gi) {
                            *o += w * g;
                        }
                    }
                }
                dfeat
            }
            None => dmixed,
        };

        for b in 0..n {
            let k = if cfg.front == FrontEnd::EleAdapt { b } else { 0 };
            let (kernel, rest) = front[2 * k..].split_first_mut().expect("subnet tensors");
            affine_backward(
                &cache.block_inputs[b * p..(b + 1) * p],
                &dfeat[b * d..(b + 1) * d],
                &mut kernel.data,
                &mut rest[0].data,
            );
        }
    }

    pub fn forward(&self, img: &Image8) -> Result<SampleOutput> {
        let cache = self.forward_cached(img)?;
        Ok(SampleOutput {
            posteriors: cache.head.probs,
            features: cache.adapted,
        })
    }

    pub fn predict(&self, img: &Image8) -> Result<Vec<f64>> {
        Ok(self.forward(img)?.posteriors)
    }

    fn check_labels(&self, batch: &[&LabeledExample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        if let Some(ex) = batch.iter().find(|e| e.label >= self.config.classes) {
            return Err(Error::Range(format!(
                "label {} outside [0, {})",
                ex.label, self.config.classes
            )));
        }
        Ok(())
    }

    /// Mean objective over `batch` without gradients.
    pub fn batch_loss(
        &self,
        batch: &[&LabeledExample],
        lambdas: Lambdas,
        exec: Exec,
    ) -> Result<BatchOutcome> {
        self.check_labels(batch)?;
        let per_sample = exec
            .map(batch, |ex| -> Result<(f64, f64, bool)> {
                let cache = self.forward_cached(&ex.image)?;
                Ok(sample_terms(self, &cache, ex.label))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(self.summarize(&per_sample, lambdas, None))
    }

    /// Mean objective over `batch` and its gradient with respect to every
    /// tensor in [`Model::params`].
    pub fn batch_loss_and_grad(
        &self,
        batch: &[&LabeledExample],
        lambdas: Lambdas,
        exec: Exec,
    ) -> Result<BatchOutcome> {
        self.check_labels(batch)?;
        let m = batch.len() as f64;
        let chunks: Vec<&[&LabeledExample]> = batch.chunks(GRAD_CHUNK).collect();
        let results = exec
            .map(&chunks, |chunk| -> Result<(Vec<(f64, f64, bool)>, ParamSet)> {
                let mut grads = self.params.zeros_like();
                let mut terms = Vec::with_capacity(chunk.len());
                for ex in chunk.iter() {
                    let cache = self.forward_cached(&ex.image)?;
                    terms.push(sample_terms(self, &cache, ex.label));
                    self.backward_cached(&cache, ex.label, 1.0 / m, lambdas.s / m, &mut grads);
                }
                Ok((terms, grads))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let mut grads = self.params.zeros_like();
        let mut per_sample = Vec::with_capacity(batch.len());
        for (terms, g) in results {
            per_sample.extend(terms);
            grads.add_assign(&g);
        }
        if let (Some(ui), Some(u)) = (self.perm_index(), self.perm_matrix()) {
            for (g, d) in grads.tensors[ui].data.iter_mut().zip(loss_u_grad(&u)) {
                *g += lambdas.u * d;
            }
        }
        Ok(self.summarize(&per_sample, lambdas, Some(grads)))
    }

    fn summarize(
        &self,
        per_sample: &[(f64, f64, bool)],
        lambdas: Lambdas,
        grads: Option<ParamSet>,
    ) -> BatchOutcome {
        let m = per_sample.len() as f64;
        let ce = per_sample.iter().map(|t| t.0).sum::<f64>() / m;
        let smooth = if self.config.has_adapter() {
            per_sample.iter().map(|t| t.1).sum::<f64>() / m
        } else {
            0.0
        };
        let u = self.perm_matrix().map_or(0.0, |u| loss_u(&u));
        BatchOutcome {
            loss: loss_total(ce, u, smooth, lambdas),
            correct: per_sample.iter().filter(|t| t.2).count(),
            grads,
        }
    }
}

/// `(cross entropy, smoothness, correct)` of one sample.
fn sample_terms(model: &Model, cache: &SampleCache, label: usize) -> (f64, f64, bool) {
    let probs = &cache.head.probs;
    let ce = -probs[label].max(PROB_EPS).ln();
    let smooth = if model.config.has_adapter() {
        loss_s_single(&cache.adapted)
    } else {
        0.0
    };
    (ce, smooth, argmax(probs) == label)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: LossBreakdown,
    pub correct: usize,
    pub grads: Option<ParamSet>,
}

/// Single-sample forward/backward with an explicit ordering contract:
/// [`Tape::backward`] fails until [`Tape::forward`] has run.
pub struct Tape<'m> {
    model: &'m Model,
    cache: Option<(SampleCache, usize)>,
}

impl<'m> Tape<'m> {
    pub fn new(model: &'m Model) -> Self {
        Tape { model, cache: None }
    }

    pub fn forward(&mut self, example: &LabeledExample) -> Result<SampleOutput> {
        if example.label >= self.model.config.classes {
            return Err(Error::Range(format!("label {} out of range", example.label)));
        }
        let cache = self.model.forward_cached(&example.image)?;
        let out = SampleOutput {
            posteriors: cache.head.probs.clone(),
            features: cache.adapted.clone(),
        };
        self.cache = Some((cache, example.label));
        Ok(out)
    }

    /// Gradient of `CE + lambda_s * L_s` for the last forwarded sample
    /// (the `U` penalty is batch-level and not included).
    pub fn backward(&self, lambda_s: f64) -> Result<ParamSet> {
        let (cache, label) = self
            .cache
            .as_ref()
            .ok_or(Error::State("backward called before forward"))?;
        let mut grads = self.model.params.zeros_like();
        self.model
            .backward_cached(cache, *label, 1.0, lambda_s, &mut grads);
        Ok(grads)
    }
}

/// Adaptation-network output for one image (the scaled image itself when
/// the model has no adaptation network).
pub fn adaptnet_forward(img: &Image8, model: &Model) -> Result<FeatureMap> {
    Ok(model.forward_cached(img)?.adapted)
}
