//! Toy training loop for the combined loss.
//!
//! A one-hidden-layer tanh MLP maps each object's input vector to a
//! descriptor `ρ`. Two linear heads read `ρ`:
//!
//! - the depth head predicts `ẑ` and is trained with an L1 loss (the
//!   baseline task);
//! - the auxiliary head predicts `(ẑ, log σ̂)` for the Laplacian depth loss.
//!
//! The quasi-isometric loss acts directly on the descriptors of each
//! mini-batch. With [`Experiment::MapLevel`] the encoder runs per pixel on
//! grid scenes, descriptors are read from the 5×5-pooled feature map at the
//! object centers, and the auxiliary head supervises every foreground pixel.
//!
//! Optimization is plain mini-batch gradient descent with a fixed learning
//! rate. A run is single-threaded and fully determined by its config.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{
    avg_pool_5x5, avg_pool_5x5_backward, build_object_depth_map, descriptors_from_pooled, obj_depth_loss, qi_loss,
    DepthMapSample, FeatureMap, LossMode, DEFAULT_LAMBDA_OBJ, DEFAULT_LAMBDA_QI,
};
use crate::par;
use crate::quasi_iso::{find_violating_pairs, DescriptorSet, QiParams};
use crate::synth::{gen_noisy_scene, NoisyScene, SceneMap, SynthConfig, SynthKind};

/// Dense layer `y = W·x + b`, `W` row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform Glorot initialization scaled by `gain`, zero bias.
    fn glorot(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let limit = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    fn backward(&self, x: &[f64], grad_y: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut grad_x = vec![0.0; self.inputs];
        for (o, &gy) in grad_y.iter().enumerate() {
            if gy == 0.0 {
                continue;
            }
            grad.bias[o] += gy;
            let row = o * self.inputs;
            for i in 0..self.inputs {
                grad.weight[row + i] += gy * x[i];
                grad_x[i] += gy * self.weight[row + i];
            }
        }
        grad_x
    }

    fn axpy(&mut self, alpha: f64, other: &Linear) {
        for (w, g) in self.weight.iter_mut().zip(&other.weight) {
            *w += alpha * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&other.bias) {
            *b += alpha * g;
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Input → tanh hidden layer → linear descriptor layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub hidden: Linear,
    pub output: Linear,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    hidden: Vec<f64>,
}

impl Encoder {
    pub fn zeros(d_in: usize, hidden: usize, out: usize) -> Self {
        Self {
            hidden: Linear::zeros(d_in, hidden),
            output: Linear::zeros(hidden, out),
        }
    }

    /// Glorot initialization; `feature_gain` scales the output layer.
    pub fn init(d_in: usize, hidden: usize, out: usize, feature_gain: f64, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::glorot(d_in, hidden, 1.0, rng),
            output: Linear::glorot(hidden, out, feature_gain, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.inputs
    }

    pub fn output_dim(&self) -> usize {
        self.output.outputs
    }

    pub fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, EncoderTrace) {
        let hidden: Vec<f64> = self.hidden.forward(x).into_iter().map(f64::tanh).collect();
        (self.output.forward(&hidden), EncoderTrace { hidden })
    }

    /// Accumulates parameter gradients for one sample into `grad`.
    pub fn backward(&self, x: &[f64], trace: &EncoderTrace, grad_out: &[f64], grad: &mut Encoder) {
        let grad_h = self.output.backward(&trace.hidden, grad_out, &mut grad.output);
        let grad_pre: Vec<f64> = grad_h
            .iter()
            .zip(&trace.hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        self.hidden.backward(x, &grad_pre, &mut grad.hidden);
    }

    /// Flat parameter vector: hidden weights, hidden bias, output weights, output bias.
    pub fn params(&self) -> Vec<f64> {
        self.hidden.params().chain(self.output.params()).copied().collect()
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        let n = self.params().len();
        if theta.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: theta.len() });
        }
        for (p, v) in self.hidden.params_mut().chain(self.output.params_mut()).zip(theta) {
            *p = *v;
        }
        Ok(())
    }
}

/// Deterministic encoder forward pass.
pub fn encoder_forward(enc: &Encoder, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != enc.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: enc.input_dim(),
            got: input.len(),
        });
    }
    Ok(enc.forward_traced(input).0)
}

/// Encoder plus the depth head and the auxiliary `(ẑ, log σ̂)` head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub depth_head: Linear,
    pub aux_head: Linear,
}

impl Model {
    fn zeros_like(other: &Model) -> Self {
        Self {
            encoder: Encoder::zeros(other.encoder.input_dim(), other.encoder.hidden.outputs, other.encoder.output_dim()),
            depth_head: Linear::zeros(other.depth_head.inputs, 1),
            aux_head: Linear::zeros(other.aux_head.inputs, 2),
        }
    }

    fn init(cfg: &TrainConfig, rng: &mut impl Rng) -> Self {
        let encoder = Encoder::init(cfg.synth.dim, cfg.hidden, cfg.out_dim, cfg.feature_gain, rng);
        let mid = 0.5 * (cfg.synth.depth_range.0 + cfg.synth.depth_range.1);
        let mut depth_head = Linear::glorot(cfg.out_dim, 1, 1.0, rng);
        let norm = depth_head.weight.iter().map(|w| w * w).sum::<f64>().sqrt();
        depth_head.weight.iter_mut().for_each(|w| *w /= norm);
        depth_head.bias[0] = mid;
        let mut aux_head = Linear::zeros(cfg.out_dim, 2);
        aux_head.weight[..cfg.out_dim].copy_from_slice(&depth_head.weight);
        aux_head.bias[0] = mid;
        aux_head.bias[1] = (0.25 * (cfg.synth.depth_range.1 - cfg.synth.depth_range.0)).max(1.0).ln();
        Self {
            encoder,
            depth_head,
            aux_head,
        }
    }

    fn axpy(&mut self, alpha: f64, g: &Model) {
        self.encoder.hidden.axpy(alpha, &g.encoder.hidden);
        self.encoder.output.axpy(alpha, &g.encoder.output);
        // the depth readout direction is fixed; only its offset trains
        self.depth_head.bias[0] += alpha * g.depth_head.bias[0];
        // the auxiliary head shares that direction and keeps a single log σ̂
        for (b, d) in self.aux_head.bias.iter_mut().zip(&g.aux_head.bias) {
            *b += alpha * d;
        }
    }

    pub fn predict_depth(&self, rho: &[f64]) -> f64 {
        self.depth_head.forward(rho)[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Experiment {
    /// Encoder outputs are the descriptors.
    #[default]
    DescriptorLevel,
    /// Per-pixel encoder on grid scenes, pooled descriptors, depth-map loss.
    MapLevel,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::DescriptorLevel => "descriptor_level",
            Experiment::MapLevel => "map_level",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descriptor_level" | "descriptor" => Ok(Experiment::DescriptorLevel),
            "map_level" | "map" => Ok(Experiment::MapLevel),
            other => Err(Error::InvalidParam(format!(
                "experiment must be descriptor_level or map_level (got {other:?})"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub synth: SynthConfig,
    pub hidden: usize,
    pub out_dim: usize,
    pub lambda_qi: f64,
    pub lambda_obj: f64,
    pub qi: QiParams,
    pub qi_mode: LossMode,
    pub epochs: usize,
    /// Objects per batch. Map-level batches hold whole scenes, about
    /// `batch_size / objects_per_scene` of them.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub experiment: Experiment,
    /// Initialization gain of the encoder output layer.
    pub feature_gain: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::training_scene(),
            hidden: 32,
            out_dim: 16,
            lambda_qi: DEFAULT_LAMBDA_QI,
            lambda_obj: DEFAULT_LAMBDA_OBJ,
            qi: QiParams::default(),
            qi_mode: LossMode::Eq6,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 0,
            experiment: Experiment::DescriptorLevel,
            feature_gain: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.qi.validate()?;
        if self.synth.kind != SynthKind::NoisyScene {
            return Err(Error::InvalidParam("training requires a noisy_scene dataset".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParam("batch_size must be ≥ 2".into()));
        }
        if self.hidden == 0 || self.out_dim == 0 {
            return Err(Error::InvalidParam("encoder sizes must be ≥ 1".into()));
        }
        for (name, v) in [("lambda_qi", self.lambda_qi), ("lambda_obj", self.lambda_obj)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("{name} must be finite and ≥ 0")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// One row per epoch. Losses are means over the epoch's batches; the
/// violation ratio and `e_z` are measured on the full dataset after the
/// epoch's updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub baseline_loss: f64,
    pub qi_loss: f64,
    pub obj_loss: f64,
    pub total: f64,
    pub violation_ratio: f64,
    /// Mean absolute depth error of the depth head, in meters.
    pub e_z: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.rows.last()
    }
}

struct BatchLosses {
    baseline: f64,
    qi: f64,
    obj: f64,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Baseline L1 loss on the depth head; accumulates `∂/∂ρ` and head grads.
fn baseline_step(model: &Model, rhos: &[Vec<f64>], depths: &[f64], grad: &mut Model, grad_rho: &mut [Vec<f64>]) -> f64 {
    let inv = 1.0 / rhos.len() as f64;
    let mut loss = 0.0;
    for ((rho, &z), g_rho) in rhos.iter().zip(depths).zip(grad_rho.iter_mut()) {
        let pred = model.predict_depth(rho);
        loss += (pred - z).abs();
        let g = model.depth_head.backward(rho, &[sign(pred - z) * inv], &mut grad.depth_head);
        for (a, b) in g_rho.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss * inv
}

fn check_finite(v: f64, epoch: usize, batch: usize, what: &'static str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, batch, what })
    }
}

/// State shared by both experiments.
struct Run<'a> {
    cfg: &'a TrainConfig,
    data: NoisyScene,
    held_out: NoisyScene,
    model: Model,
    rng: ChaCha8Rng,
}

impl Run<'_> {
    fn descriptor_batch(&mut self, batch: &[usize], epoch: usize, batch_no: usize) -> Result<BatchLosses> {
        let cfg = self.cfg;
        let model = &self.model;
        let mut grad = Model::zeros_like(model);
        let (rhos, traces): (Vec<Vec<f64>>, Vec<EncoderTrace>) =
            batch.iter().map(|&i| model.encoder.forward_traced(&self.data.inputs[i])).unzip();
        let depths: Vec<f64> = batch.iter().map(|&i| self.data.depths[i]).collect();
        let mut grad_rho = vec![vec![0.0; cfg.out_dim]; batch.len()];

        let baseline = baseline_step(model, &rhos, &depths, &mut grad, &mut grad_rho);
        check_finite(baseline, epoch, batch_no, "baseline loss")?;

        let qi = if cfg.lambda_qi != 0.0 {
            let ds = DescriptorSet::from_parts(depths.clone(), rhos.clone())
                .map_err(|_| Error::Diverged { epoch, batch: batch_no, what: "descriptor" })?;
            let out = qi_loss(&ds, &cfg.qi, cfg.qi_mode)?;
            check_finite(out.value, epoch, batch_no, "qi loss")?;
            for (i, g_rho) in grad_rho.iter_mut().enumerate() {
                for (a, b) in g_rho.iter_mut().zip(out.grad_row(i, cfg.out_dim)) {
                    *a += cfg.lambda_qi * b;
                }
            }
            out.value
        } else {
            0.0
        };

        let obj = if cfg.lambda_obj != 0.0 {
            let aux: Vec<Vec<f64>> = rhos.iter().map(|r| model.aux_head.forward(r)).collect();
            let sample = DepthMapSample {
                height: 1,
                width: batch.len(),
                pred_depth: aux.iter().map(|a| a[0]).collect(),
                pred_log_sigma: aux.iter().map(|a| a[1]).collect(),
                gt_depth: depths.clone(),
                mask: vec![true; batch.len()],
            };
            let out = obj_depth_loss(&sample)
                .map_err(|_| Error::Diverged { epoch, batch: batch_no, what: "auxiliary head output" })?;
            check_finite(out.value, epoch, batch_no, "object depth loss")?;
            let n = batch.len();
            for (k, (rho, g_rho)) in rhos.iter().zip(grad_rho.iter_mut()).enumerate() {
                let gy = [cfg.lambda_obj * out.grad[k], cfg.lambda_obj * out.grad[n + k]];
                let g = model.aux_head.backward(rho, &gy, &mut grad.aux_head);
                for (a, b) in g_rho.iter_mut().zip(g) {
                    *a += b;
                }
            }
            out.value
        } else {
            0.0
        };

        for ((&i, trace), g_rho) in batch.iter().zip(&traces).zip(&grad_rho) {
            model.encoder.backward(&self.data.inputs[i], trace, g_rho, &mut grad.encoder);
        }
        self.model.axpy(-cfg.learning_rate, &grad);
        Ok(BatchLosses { baseline, qi, obj })
    }

    /// Runs the encoder on every pixel of a scene.
    fn encode_scene(model: &Model, scene: &SceneMap) -> (FeatureMap, Vec<EncoderTrace>) {
        let (h, w) = (scene.input.height(), scene.input.width());
        let c = model.encoder.output_dim();
        let mut features = FeatureMap::zeros(c, h, w);
        let mut traces = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (rho, trace) = model.encoder.forward_traced(&scene.input.pixel(y, x));
                for (ch, v) in rho.into_iter().enumerate() {
                    features.set(ch, y, x, v);
                }
                traces.push(trace);
            }
        }
        (features, traces)
    }

    fn map_batch(&mut self, scenes: &[usize], epoch: usize, batch_no: usize) -> Result<BatchLosses> {
        let cfg = self.cfg;
        let model = &self.model;
        let c = cfg.out_dim;
        let mut grad = Model::zeros_like(model);

        let mut encoded = Vec::with_capacity(scenes.len());
        let mut rhos = Vec::new();
        let mut depths = Vec::new();
        for &s in scenes {
            let scene = &self.data.scenes[s];
            let (features, traces) = Self::encode_scene(model, scene);
            let pooled = avg_pool_5x5(&features);
            let ds = descriptors_from_pooled(&pooled, &scene.annotations)?;
            rhos.extend(ds.features().iter().cloned());
            depths.extend_from_slice(ds.depths());
            encoded.push((features, traces));
        }
        let mut grad_rho = vec![vec![0.0; c]; rhos.len()];
        let baseline = baseline_step(model, &rhos, &depths, &mut grad, &mut grad_rho);
        check_finite(baseline, epoch, batch_no, "baseline loss")?;

        let qi = if cfg.lambda_qi != 0.0 && rhos.len() >= 2 {
            let ds = DescriptorSet::from_parts(depths.clone(), rhos.clone())
                .map_err(|_| Error::Diverged { epoch, batch: batch_no, what: "descriptor" })?;
            let out = qi_loss(&ds, &cfg.qi, cfg.qi_mode)?;
            check_finite(out.value, epoch, batch_no, "qi loss")?;
            for (i, g_rho) in grad_rho.iter_mut().enumerate() {
                for (a, b) in g_rho.iter_mut().zip(out.grad_row(i, c)) {
                    *a += cfg.lambda_qi * b;
                }
            }
            out.value
        } else {
            0.0
        };

        let mut obj_total = 0.0;
        let mut offset = 0;
        for (&s, (features, traces)) in scenes.iter().zip(&encoded) {
            let scene = &self.data.scenes[s];
            let (h, w) = (features.height(), features.width());
            // descriptor gradients land on the pooled map at the centers
            let mut grad_pooled = FeatureMap::zeros(c, h, w);
            for (k, a) in scene.annotations.iter().enumerate() {
                for (ch, g) in grad_rho[offset + k].iter().enumerate() {
                    let cur = grad_pooled.get(ch, a.v, a.u);
                    grad_pooled.set(ch, a.v, a.u, cur + g);
                }
            }
            offset += scene.annotations.len();
            let mut grad_features = avg_pool_5x5_backward(&grad_pooled);

            if cfg.lambda_obj != 0.0 {
                let (gt, mask) = build_object_depth_map(&scene.annotations, h, w)?;
                let aux: Vec<Vec<f64>> = (0..h * w)
                    .map(|p| model.aux_head.forward(&features.pixel(p / w, p % w)))
                    .collect();
                let sample = DepthMapSample {
                    height: h,
                    width: w,
                    pred_depth: aux.iter().map(|a| a[0]).collect(),
                    pred_log_sigma: aux.iter().map(|a| a[1]).collect(),
                    gt_depth: gt,
                    mask,
                };
                let out = obj_depth_loss(&sample)
                    .map_err(|_| Error::Diverged { epoch, batch: batch_no, what: "auxiliary head output" })?;
                check_finite(out.value, epoch, batch_no, "object depth loss")?;
                // scenes are weighted equally
                let scale = cfg.lambda_obj / scenes.len() as f64;
                obj_total += out.value;
                for p in (0..h * w).filter(|&p| sample.mask[p]) {
                    let gy = [scale * out.grad[p], scale * out.grad[h * w + p]];
                    let g = model.aux_head.backward(&features.pixel(p / w, p % w), &gy, &mut grad.aux_head);
                    for (ch, v) in g.into_iter().enumerate() {
                        let cur = grad_features.get(ch, p / w, p % w);
                        grad_features.set(ch, p / w, p % w, cur + v);
                    }
                }
            }

            for p in 0..h * w {
                let g = grad_features.pixel(p / w, p % w);
                if g.iter().any(|v| *v != 0.0) {
                    model
                        .encoder
                        .backward(&scene.input.pixel(p / w, p % w), &traces[p], &g, &mut grad.encoder);
                }
            }
        }
        self.model.axpy(-cfg.learning_rate, &grad);
        Ok(BatchLosses {
            baseline,
            qi,
            obj: obj_total / scenes.len() as f64,
        })
    }

    /// Descriptors of every object under the current model.
    fn all_descriptors(&self, data: &NoisyScene) -> Result<DescriptorSet> {
        let n = data.depths.len();
        match self.cfg.experiment {
            Experiment::DescriptorLevel => {
                let rhos = data.inputs.iter().map(|x| self.model.encoder.forward_traced(x).0).collect();
                DescriptorSet::from_parts(data.depths.clone(), rhos)
            }
            Experiment::MapLevel => {
                let mut rhos = vec![Vec::new(); n];
                for scene in &data.scenes {
                    let pooled = avg_pool_5x5(&Self::encode_scene(&self.model, scene).0);
                    for (a, &o) in scene.annotations.iter().zip(&scene.objects) {
                        rhos[o] = pooled.pixel(a.v, a.u);
                    }
                }
                DescriptorSet::from_parts(data.depths.clone(), rhos)
            }
        }
    }

    /// Violation ratio on the training set and `E_z` on the held-out set.
    fn evaluate(&self) -> Result<(f64, f64)> {
        let ratio = find_violating_pairs(&self.all_descriptors(&self.data)?, &self.cfg.qi).ratio;
        let ds = self.all_descriptors(&self.held_out)?;
        let e_z = ds
            .features()
            .iter()
            .zip(ds.depths())
            .map(|(rho, z)| (self.model.predict_depth(rho) - z).abs())
            .sum::<f64>()
            / ds.len() as f64;
        Ok((ratio, e_z))
    }
}

/// Trains for `cfg.epochs` epochs and logs one row per epoch.
pub fn train(cfg: &TrainConfig) -> Result<MetricsLog> {
    train_model(cfg).map(|(log, _)| log)
}

/// The synthetic dataset a run with `cfg` trains on.
pub fn training_data(cfg: &TrainConfig) -> Result<NoisyScene> {
    let synth = SynthConfig { seed: cfg.synth.seed ^ cfg.seed, ..cfg.synth.clone() };
    gen_noisy_scene(&synth)
}

/// Objects used only to measure `E_z`, drawn like the training set under
/// another seed.
pub fn held_out_data(cfg: &TrainConfig) -> Result<NoisyScene> {
    let synth = SynthConfig { seed: cfg.synth.seed ^ cfg.seed ^ HELD_OUT_SEED, ..cfg.synth.clone() };
    gen_noisy_scene(&synth)
}

const HELD_OUT_SEED: u64 = 0x5eed_0f_e7a1;

/// Like [`train`], also returning the trained model.
pub fn train_model(cfg: &TrainConfig) -> Result<(MetricsLog, Model)> {
    cfg.validate()?;
    let data = training_data(cfg)?;
    let held_out = held_out_data(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let model = Model::init(cfg, &mut rng);
    let mut run = Run { cfg, data, held_out, model, rng };

    let mut log = MetricsLog::default();
    for epoch in 0..cfg.epochs {
        let units = match cfg.experiment {
            Experiment::DescriptorLevel => run.data.inputs.len(),
            Experiment::MapLevel => run.data.scenes.len(),
        };
        let per_batch = match cfg.experiment {
            Experiment::DescriptorLevel => cfg.batch_size,
            Experiment::MapLevel => (cfg.batch_size / cfg.synth.scene.objects_per_scene).max(1),
        };
        let mut order: Vec<usize> = (0..units).collect();
        order.shuffle(&mut run.rng);

        let (mut base, mut qi, mut obj, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (batch_no, batch) in order.chunks(per_batch).enumerate() {
            let losses = match cfg.experiment {
                Experiment::DescriptorLevel => run.descriptor_batch(batch, epoch, batch_no)?,
                Experiment::MapLevel => run.map_batch(batch, epoch, batch_no)?,
            };
            let batch_total = losses.baseline + cfg.lambda_qi * losses.qi + cfg.lambda_obj * losses.obj;
            check_finite(batch_total, epoch, batch_no, "total loss")?;
            base += losses.baseline;
            qi += losses.qi;
            obj += losses.obj;
            total += batch_total;
            batches += 1;
        }
        let inv = 1.0 / batches.max(1) as f64;
        let (violation_ratio, e_z) = run.evaluate()?;
        check_finite(e_z, epoch, batches, "depth error")?;
        log.rows.push(EpochMetrics {
            epoch,
            baseline_loss: base * inv,
            qi_loss: qi * inv,
            obj_loss: obj * inv,
            total: total * inv,
            violation_ratio,
            e_z,
        });
    }
    Ok((log, run.model))
}

/// Final metrics of one sweep run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub final_ratio: f64,
    pub final_e_z: f64,
}

fn sweep<F>(cfg: &TrainConfig, values: &[f64], apply: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&mut TrainConfig, f64) + Sync + Send,
{
    if values.is_empty() {
        return Err(Error::InvalidParam("sweep needs at least one value".into()));
    }
    let runs = par::map_slice(values, |&v| {
        let mut c = cfg.clone();
        apply(&mut c, v);
        train(&c).map(|log| {
            let last = log.last().copied();
            SweepRow {
                value: v,
                final_ratio: last.map_or(0.0, |r| r.violation_ratio),
                final_e_z: last.map_or(0.0, |r| r.e_z),
            }
        })
    });
    runs.into_iter().collect()
}

/// One training run per `λ_qi`, all sharing `cfg.seed`. Rows follow the
/// input order.
pub fn sweep_lambda(cfg: &TrainConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    sweep(cfg, lambdas, |c, v| c.lambda_qi = v)
}

/// One training run per ε, all sharing `cfg.seed`.
pub fn sweep_epsilon(cfg: &TrainConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>> {
    sweep(cfg, epsilons, |c, v| c.qi.epsilon = v)
}
