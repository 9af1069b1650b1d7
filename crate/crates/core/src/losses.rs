//! Losses over depth-labelled descriptors and depth maps.
//!
//! - [`qi_loss`]: the quasi-isometric contrastive loss. Pairs violating the
//!   upper bound (P⁺) act as anchors, pairs violating the lower bound (P⁻)
//!   form the negative pool:
//!
//!   ```text
//!   L = −1/|P⁺| Σ_{P⁺} log( S⁺ / (S⁺ + Σ_{P⁻} S⁻) )
//!   S⁺ = exp(−(d₂ − K·d₁ − B)/τ),   S⁻ = exp(−(d₁/K − B − d₂)/τ)
//!   ```
//!
//!   [`LossMode::Alg1Literal`] evaluates the masked-matrix form instead, where
//!   masked entries contribute `exp(0) = 1` and the mean runs over all `L²`
//!   entries.
//! - [`obj_depth_loss`]: Laplacian aleatoric loss over foreground pixels.
//! - [`avg_pool_5x5`] and [`extract_descriptors`]: descriptor extraction from
//!   a `C×H×W` feature map.
//! - [`total_loss`]: weighted sum of the three terms.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::quasi_iso::{find_violating_pairs, DescriptorSet, QiParams, Side, ViolationReport};

pub const DEFAULT_LAMBDA_QI: f64 = 0.5;
pub const DEFAULT_LAMBDA_OBJ: f64 = 1.0;

/// Side length of the descriptor pooling window.
pub const POOL_WINDOW: usize = 5;

/// A `C×H×W` feature map stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("feature map height and width must be ≥ 1".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                expected: channels * height * width,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f64) {
        let o = self.offset(c, y, x);
        self.data[o] = value;
    }

    /// The `C`-vector at row `y`, column `x`.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)` at feature-map resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// A ground-truth object on the feature map. The center `(u, v)` is
/// column `u`, row `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub u: usize,
    pub v: usize,
    pub depth: f64,
    pub bbox: BoundingBox,
}

impl ObjectAnnotation {
    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.u >= width || self.v >= height {
            return Err(Error::InvalidInput(format!(
                "center ({}, {}) outside {width}×{height} map",
                self.u, self.v
            )));
        }
        if !(self.depth.is_finite() && self.depth > 0.0) {
            return Err(Error::InvalidInput(format!("object depth must be > 0, got {}", self.depth)));
        }
        let b = self.bbox;
        if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > width || b.y1 > height {
            return Err(Error::InvalidInput(format!(
                "box {b:?} empty or outside {width}×{height} map"
            )));
        }
        Ok(())
    }
}

#[inline]
fn window(center: usize, len: usize) -> (usize, usize) {
    let r = POOL_WINDOW / 2;
    (center.saturating_sub(r), (center + r + 1).min(len))
}

/// Stride-1 5×5 mean filter. Border windows are truncated to the map and
/// averaged over the in-bounds pixels, so the output has the input's shape.
pub fn avg_pool_5x5(map: &FeatureMap) -> FeatureMap {
    let (h, w) = (map.height, map.width);
    let mut out = FeatureMap::zeros(map.channels, h, w);
    par::for_each_chunk_mut(&mut out.data, h * w, |c, plane| {
        let src = &map.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let (ya, yb) = window(y, h);
            for x in 0..w {
                let (xa, xb) = window(x, w);
                let mut sum = 0.0;
                for yy in ya..yb {
                    for xx in xa..xb {
                        sum += src[yy * w + xx];
                    }
                }
                plane[y * w + x] = sum / ((yb - ya) * (xb - xa)) as f64;
            }
        }
    });
    out
}

/// Adjoint of [`avg_pool_5x5`]: maps a gradient on the pooled map back to
/// the input map.
pub fn avg_pool_5x5_backward(grad_out: &FeatureMap) -> FeatureMap {
    let (h, w) = (grad_out.height, grad_out.width);
    let mut out = FeatureMap::zeros(grad_out.channels, h, w);
    par::for_each_chunk_mut(&mut out.data, h * w, |c, plane| {
        let g = &grad_out.data[c * h * w..(c + 1) * h * w];
        // the window relation is symmetric, so the output pixels that read
        // (y, x) are exactly those inside its own window
        for y in 0..h {
            let (ya, yb) = window(y, h);
            for x in 0..w {
                let (xa, xb) = window(x, w);
                let mut sum = 0.0;
                for yy in ya..yb {
                    let (ra, rb) = window(yy, h);
                    for xx in xa..xb {
                        let (ca, cb) = window(xx, w);
                        sum += g[yy * w + xx] / ((rb - ra) * (cb - ca)) as f64;
                    }
                }
                plane[y * w + x] = sum;
            }
        }
    });
    out
}

/// Reads each object's descriptor at its center from an already pooled map.
pub fn descriptors_from_pooled(pooled: &FeatureMap, anns: &[ObjectAnnotation]) -> Result<DescriptorSet> {
    for a in anns {
        if a.u >= pooled.width || a.v >= pooled.height {
            return Err(Error::InvalidInput(format!(
                "center ({}, {}) outside {}×{} map",
                a.u, a.v, pooled.width, pooled.height
            )));
        }
    }
    DescriptorSet::from_parts(
        anns.iter().map(|a| a.depth).collect(),
        anns.iter().map(|a| pooled.pixel(a.v, a.u)).collect(),
    )
}

/// Pools the map with [`avg_pool_5x5`] and reads one descriptor per object,
/// in annotation order.
pub fn extract_descriptors(map: &FeatureMap, anns: &[ObjectAnnotation]) -> Result<DescriptorSet> {
    descriptors_from_pooled(&avg_pool_5x5(map), anns)
}

/// Which form of the quasi-isometric loss to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Sums over the violating pair sets only.
    #[default]
    Eq6,
    /// Masked-matrix evaluation with masked entries set to zero.
    Alg1Literal,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Eq6 => "eq6",
            LossMode::Alg1Literal => "alg1_literal",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq6" => Ok(LossMode::Eq6),
            "alg1_literal" => Ok(LossMode::Alg1Literal),
            other => Err(Error::InvalidParam(format!(
                "mode must be eq6 or alg1_literal (got {other:?})"
            ))),
        }
    }
}

/// A loss value and its gradient with respect to a flat input vector.
///
/// For [`qi_loss`] the gradient is `L×C` row-major over the descriptors.
/// For [`obj_depth_loss`] it is `[∂/∂ẑ (H·W) | ∂/∂log σ̂ (H·W)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossOutput {
    pub fn zero(len: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; len],
        }
    }

    /// Row `i` of a row-major gradient with rows of length `dim`.
    pub fn grad_row(&self, i: usize, dim: usize) -> &[f64] {
        &self.grad[i * dim..(i + 1) * dim]
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Loss derivative with respect to one pair's feature distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairGradient {
    pub side: Side,
    pub i: usize,
    pub j: usize,
    pub margin: f64,
    /// `∂L/∂d₂`. Gradient descent moves `d₂` against this sign.
    pub d_loss_d_dist: f64,
}

/// Value and per-pair distance derivatives of the set-sum form.
fn eq6_terms(report: &ViolationReport, tau: f64) -> (f64, Vec<PairGradient>) {
    let n_pos = report.pos_pairs.len();
    if n_pos == 0 || report.neg_pairs.is_empty() {
        // every term is log(S⁺/S⁺) = 0, or there are no terms at all
        return (0.0, Vec::new());
    }
    let neg_logits = report.neg_pairs.iter().map(|q| -q.margin / tau);
    let log_neg = log_sum_exp(neg_logits.clone());
    let inv = 1.0 / (n_pos as f64 * tau);

    let mut value = 0.0;
    let mut weight_sum = 0.0;
    let mut grads = Vec::with_capacity(n_pos + report.neg_pairs.len());
    for p in &report.pos_pairs {
        let x = log_neg + p.margin / tau;
        value += softplus(x);
        let w = sigmoid(x);
        weight_sum += w;
        grads.push(PairGradient {
            side: Side::Upper,
            i: p.i,
            j: p.j,
            margin: p.margin,
            d_loss_d_dist: w * inv,
        });
    }
    for (q, logit) in report.neg_pairs.iter().zip(neg_logits) {
        let softmax = (logit - log_neg).exp();
        // ∂m⁻/∂d₂ = −1 and ∂L/∂m⁻ = −(Σw)·softmax/(|P⁺|τ)
        grads.push(PairGradient {
            side: Side::Lower,
            i: q.i,
            j: q.j,
            margin: q.margin,
            d_loss_d_dist: weight_sum * softmax * inv,
        });
    }
    (value / n_pos as f64, grads)
}

/// Per-pair derivatives `∂L/∂d₂` of the set-sum loss. A positive value on a
/// lower-bound pair means gradient descent shrinks that pair's distance.
pub fn qi_pair_diagnostics(ds: &DescriptorSet, params: &QiParams) -> Result<Vec<PairGradient>> {
    params.validate()?;
    let report = find_violating_pairs(ds, params);
    Ok(eq6_terms(&report, params.tau).1)
}

fn scatter_pair_grads(ds: &DescriptorSet, params: &QiParams, pairs: &[(usize, usize, f64)]) -> Vec<f64> {
    let dim = ds.dim();
    let mut grad = vec![0.0; ds.len() * dim];
    let mut tmp = vec![0.0; dim];
    for &(i, j, g) in pairs {
        if g == 0.0 {
            continue;
        }
        let (a, b) = (ds.feature(i), ds.feature(j));
        let d = params.p_feat.dist(a, b);
        tmp.iter_mut().for_each(|t| *t = 0.0);
        params.p_feat.accumulate_grad(a, b, d, g, &mut tmp);
        for (k, t) in tmp.iter().enumerate() {
            grad[i * dim + k] += t;
            grad[j * dim + k] -= t;
        }
    }
    grad
}

fn qi_loss_eq6(ds: &DescriptorSet, params: &QiParams) -> LossOutput {
    let report = find_violating_pairs(ds, params);
    let (value, pair_grads) = eq6_terms(&report, params.tau);
    let pairs: Vec<(usize, usize, f64)> = pair_grads.iter().map(|g| (g.i, g.j, g.d_loss_d_dist)).collect();
    LossOutput {
        value,
        grad: scatter_pair_grads(ds, params, &pairs),
    }
}

fn qi_loss_alg1(ds: &DescriptorSet, params: &QiParams) -> LossOutput {
    let n = ds.len();
    if n < 2 {
        return LossOutput::zero(n * ds.dim());
    }
    let tau = params.tau;
    // kept upper-triangle entries of M⁺ and M⁻; all other entries are 0
    let mut pos: Vec<(usize, usize, f64)> = Vec::new();
    let mut neg: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d1 = ds.depth_gap(i, j);
            if !params.eligible(d1) {
                continue;
            }
            let d2 = params.p_feat.dist(ds.feature(i), ds.feature(j));
            let mp = params.upper_margin(d1, d2);
            let mn = params.lower_margin(d1, d2);
            if mp >= 0.0 {
                pos.push((i, j, mp));
            }
            if mn >= 0.0 {
                neg.push((i, j, mn));
            }
        }
    }
    let entries = (n * n) as f64;
    let masked_neg = entries - neg.len() as f64;
    let neg_sum = masked_neg + neg.iter().map(|&(_, _, m)| (-m / tau).exp()).sum::<f64>();
    let log_den = (neg_sum + params.div_guard).ln();

    // −log(A/(A + S + δ)) = softplus(log(S + δ) + M⁺/τ)
    let masked_pos = entries - pos.len() as f64;
    let mut total = masked_pos * softplus(log_den);
    let mut ds_coeff = masked_pos * sigmoid(log_den);
    let mut pair_grads = Vec::with_capacity(pos.len() + neg.len());
    for &(i, j, m) in &pos {
        let x = log_den + m / tau;
        total += softplus(x);
        let s = sigmoid(x);
        ds_coeff += s;
        pair_grads.push((i, j, s / (tau * entries)));
    }
    // ∂L/∂S = Σ_e σ(x_e) / ((S + δ)·L²), ∂S/∂M⁻ = −exp(−M⁻/τ)/τ, ∂M⁻/∂d₂ = −1
    let dl_ds = ds_coeff / ((neg_sum + params.div_guard) * entries);
    for &(i, j, m) in &neg {
        pair_grads.push((i, j, dl_ds * (-m / tau).exp() / tau));
    }
    LossOutput {
        value: total / entries,
        grad: scatter_pair_grads(ds, params, &pair_grads),
    }
}

/// Quasi-isometric loss and its gradient with respect to every descriptor
/// component (`L×C`, row-major). Depths are labels and receive no gradient.
///
/// Violating-set membership is fixed within one evaluation, so the loss is
/// piecewise smooth. With no upper-bound violations the value is 0.
pub fn qi_loss(ds: &DescriptorSet, params: &QiParams, mode: LossMode) -> Result<LossOutput> {
    params.validate()?;
    Ok(match mode {
        LossMode::Eq6 => qi_loss_eq6(ds, params),
        LossMode::Alg1Literal => qi_loss_alg1(ds, params),
    })
}

/// Max relative error between an analytical gradient and a central
/// difference estimate, relative to the larger of the two gradients' ∞-norms.
pub fn relative_grad_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, g| m.max(g.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central-difference audit of [`qi_loss`] for the given mode.
pub fn qi_loss_grad_check_mode(ds: &DescriptorSet, params: &QiParams, mode: LossMode, h: f64) -> Result<f64> {
    let analytic = qi_loss(ds, params, mode)?.grad;
    let dim = ds.dim();
    let mut feats = ds.features().to_vec();
    let mut numeric = vec![0.0; analytic.len()];
    for i in 0..ds.len() {
        for k in 0..dim {
            let orig = feats[i][k];
            feats[i][k] = orig + h;
            let plus = qi_loss(&ds.with_features(feats.clone())?, params, mode)?.value;
            feats[i][k] = orig - h;
            let minus = qi_loss(&ds.with_features(feats.clone())?, params, mode)?.value;
            feats[i][k] = orig;
            numeric[i * dim + k] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(relative_grad_error(&analytic, &numeric))
}

/// Central-difference audit of the set-sum loss gradient; see
/// [`relative_grad_error`] for the error measure.
pub fn qi_loss_grad_check(ds: &DescriptorSet, params: &QiParams, h: f64) -> Result<f64> {
    qi_loss_grad_check_mode(ds, params, LossMode::Eq6, h)
}

/// Ground-truth depth map and foreground mask. Each box is filled with its
/// object's depth; where boxes overlap the nearer (smaller) depth wins.
pub fn build_object_depth_map(anns: &[ObjectAnnotation], height: usize, width: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut depth = vec![0.0; height * width];
    let mut mask = vec![false; height * width];
    for a in anns {
        a.validate(height, width)?;
        let b = a.bbox;
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let o = y * width + x;
                if !mask[o] || a.depth < depth[o] {
                    depth[o] = a.depth;
                    mask[o] = true;
                }
            }
        }
    }
    Ok((depth, mask))
}

/// Per-pixel depth predictions with log-uncertainty, and the supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMapSample {
    pub height: usize,
    pub width: usize,
    pub pred_depth: Vec<f64>,
    /// `log σ̂`; `σ̂ = exp` of this, so positivity is structural.
    pub pred_log_sigma: Vec<f64>,
    pub gt_depth: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DepthMapSample {
    fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        for len in [
            self.pred_depth.len(),
            self.pred_log_sigma.len(),
            self.gt_depth.len(),
            self.mask.len(),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if self.pred_depth.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("predicted depth"));
        }
        if self.pred_log_sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("predicted log sigma"));
        }
        if self.gt_depth.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ground-truth depth"));
        }
        Ok(())
    }
}

/// Laplacian aleatoric loss averaged over the foreground mask:
/// `(1/|D|) Σ (√2/σ̂)|z − ẑ| + log σ̂`. Gradients are with respect to `ẑ`
/// and `log σ̂` and vanish off the mask.
pub fn obj_depth_loss(sample: &DepthMapSample) -> Result<LossOutput> {
    sample.validate()?;
    let n = sample.height * sample.width;
    let count = sample.mask.iter().filter(|m| **m).count();
    let mut out = LossOutput::zero(2 * n);
    if count == 0 {
        return Ok(out);
    }
    let inv = 1.0 / count as f64;
    let (g_pred, g_sigma) = out.grad.split_at_mut(n);
    let mut total = 0.0;
    for p in (0..n).filter(|&p| sample.mask[p]) {
        let r = sample.gt_depth[p] - sample.pred_depth[p];
        let s = sample.pred_log_sigma[p];
        let inv_sigma = (-s).exp();
        total += SQRT_2 * r.abs() * inv_sigma + s;
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        // ∂/∂ẑ of |z − ẑ| is −sign(z − ẑ)
        g_pred[p] = -SQRT_2 * sign * inv_sigma * inv;
        g_sigma[p] = (1.0 - SQRT_2 * r.abs() * inv_sigma) * inv;
    }
    out.value = total * inv;
    Ok(out)
}

/// `value = baseline + λ_qi·qi + λ_obj·obj`, gradients likewise. Gradients
/// must share one parameterization; an empty gradient counts as zero.
pub fn total_loss(baseline: &LossOutput, qi: &LossOutput, obj: &LossOutput, lambda_qi: f64, lambda_obj: f64) -> Result<LossOutput> {
    let len = [&baseline.grad, &qi.grad, &obj.grad]
        .iter()
        .map(|g| g.len())
        .max()
        .unwrap_or(0);
    for g in [&baseline.grad, &qi.grad, &obj.grad] {
        if !g.is_empty() && g.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: g.len() });
        }
    }
    let at = |g: &Vec<f64>, k: usize| if g.is_empty() { 0.0 } else { g[k] };
    Ok(LossOutput {
        value: baseline.value + lambda_qi * qi.value + lambda_obj * obj.value,
        grad: (0..len)
            .map(|k| at(&baseline.grad, k) + lambda_qi * at(&qi.grad, k) + lambda_obj * at(&obj.grad, k))
            .collect(),
    })
}
