//! Seeded synthetic datasets.
//!
//! Random streams come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! [`SynthConfig::seed`]. The collinear and arc generators do not draw random
//! numbers at all.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::{BoundingBox, FeatureMap, ObjectAnnotation};
use crate::quasi_iso::DescriptorSet;

/// Number of depth-derived input dimensions in a noisy scene.
pub const GEOMETRIC_DIMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Collinear,
    Arc,
    NoisyScene,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Collinear => "collinear",
            SynthKind::Arc => "arc",
            SynthKind::NoisyScene => "noisy_scene",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collinear" => Ok(SynthKind::Collinear),
            "arc" => Ok(SynthKind::Arc),
            "noisy_scene" | "noisy-scene" => Ok(SynthKind::NoisyScene),
            other => Err(Error::InvalidParam(format!(
                "kind must be collinear, arc or noisy_scene (got {other:?})"
            ))),
        }
    }
}

/// Grid layout for the feature-map form of a noisy scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub objects_per_scene: usize,
    /// Box side in cells is `round(box_scale / z)`, clamped to `[1, min(H, W)/2]`.
    pub box_scale: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            height: 12,
            width: 16,
            objects_per_scene: 4,
            box_scale: 24.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub n: usize,
    /// Feature (or input) dimension.
    pub dim: usize,
    pub nuisance_dims: usize,
    pub noise_sigma: f64,
    /// `(z_min, z_max)` in meters; for arcs, the arc-length interval.
    pub depth_range: (f64, f64),
    pub seed: u64,
    pub arc_radius: f64,
    pub scene: SceneLayout,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kind: SynthKind::NoisyScene,
            n: 512,
            dim: GEOMETRIC_DIMS + 6,
            nuisance_dims: 6,
            noise_sigma: 0.05,
            depth_range: (1.0, 60.0),
            seed: 0,
            arc_radius: 10.0,
            scene: SceneLayout::default(),
        }
    }
}

impl SynthConfig {
    /// The noisy scene used for training: lower noise and no objects
    /// closer than 5 m.
    pub fn training_scene() -> Self {
        Self {
            noise_sigma: 0.01,
            depth_range: (5.0, 60.0),
            ..Self::default()
        }
    }

    pub fn collinear(n: usize, dim: usize, depth_range: (f64, f64)) -> Self {
        Self {
            kind: SynthKind::Collinear,
            n,
            dim,
            nuisance_dims: 0,
            noise_sigma: 0.0,
            depth_range,
            ..Self::default()
        }
    }

    /// Arc of radius 10 spanning 0.9 of the circle, 64 points.
    pub fn arc() -> Self {
        let radius = 10.0;
        Self {
            kind: SynthKind::Arc,
            n: 64,
            dim: 2,
            nuisance_dims: 0,
            noise_sigma: 0.0,
            depth_range: (1.0, 1.0 + 1.8 * PI * radius),
            arc_radius: radius,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParam("n must be ≥ 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParam("dim must be ≥ 1".into()));
        }
        let (lo, hi) = self.depth_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParam("depth range must be finite with z_min ≤ z_max".into()));
        }
        if self.kind != SynthKind::Arc && !(lo > 0.0) {
            return Err(Error::InvalidParam("z_min must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParam("noise_sigma must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<DescriptorSet> {
        match self.kind {
            SynthKind::Collinear => gen_collinear(self),
            SynthKind::Arc => gen_arc(self),
            SynthKind::NoisyScene => Ok(gen_noisy_scene(self)?.descriptor_set()),
        }
    }
}

fn even_depths(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|l| lo + (hi - lo) * l as f64 / (n - 1) as f64)
        .collect()
}

/// Isometric fixture: evenly spaced depths, `ρ_l = z_l·e₀`.
///
/// The direction is the first basis vector, so feature distances equal
/// depth gaps exactly in floating point.
pub fn gen_collinear(cfg: &SynthConfig) -> Result<DescriptorSet> {
    cfg.validate()?;
    let depths = even_depths(cfg.n, cfg.depth_range);
    let features = depths
        .iter()
        .map(|&z| {
            let mut v = vec![0.0; cfg.dim];
            v[0] = z;
            v
        })
        .collect();
    DescriptorSet::from_parts(depths, features)
}

/// Points on a circle of radius `r` at arc-length positions `z_l`:
/// `ρ_l = r·(cos(z_l/r), sin(z_l/r))`. Neighbor arc length equals the
/// depth gap, and the chord is always shorter.
pub fn gen_arc(cfg: &SynthConfig) -> Result<DescriptorSet> {
    cfg.validate()?;
    if cfg.dim != 2 {
        return Err(Error::InvalidParam("arc requires dim = 2".into()));
    }
    if cfg.n < 2 {
        return Err(Error::InvalidParam("arc requires n ≥ 2".into()));
    }
    let r = cfg.arc_radius;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParam("arc radius must be > 0".into()));
    }
    let (lo, hi) = cfg.depth_range;
    if hi - lo > 2.0 * PI * r {
        return Err(Error::InvalidParam("arc span must not exceed the full circle".into()));
    }
    let depths = even_depths(cfg.n, cfg.depth_range);
    let features = depths
        .iter()
        .map(|&z| vec![r * (z / r).cos(), r * (z / r).sin()])
        .collect();
    DescriptorSet::from_parts(depths, features)
}

/// One grid scene: a `D_in×H×W` input map and its objects.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub input: FeatureMap,
    pub annotations: Vec<ObjectAnnotation>,
    /// Dataset index of each annotation.
    pub objects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyScene {
    /// Per-object input vectors, `GEOMETRIC_DIMS + nuisance_dims` long.
    pub inputs: Vec<Vec<f64>>,
    pub depths: Vec<f64>,
    pub scenes: Vec<SceneMap>,
}

impl NoisyScene {
    /// The raw inputs as descriptors.
    pub fn descriptor_set(&self) -> DescriptorSet {
        DescriptorSet::from_parts(self.depths.clone(), self.inputs.clone())
            .expect("generator output is finite and consistent")
    }
}

/// Noiseless depth cues: inverse depth `z_min/z` and its square root.
pub fn geometric_inputs(z: f64, z_min: f64) -> [f64; GEOMETRIC_DIMS] {
    let inv = z_min / z;
    [inv, inv.sqrt()]
}

/// Objects with uniform depths. Each input vector holds the depth cues of
/// [`geometric_inputs`], then `nuisance_dims` values drawn uniformly from
/// `[−1, 1]` independently of depth, with Gaussian noise of standard
/// deviation `noise_sigma` added to every component.
///
/// Objects are also laid out `objects_per_scene` at a time on grid scenes:
/// each gets a square box of side `round(box_scale/z)` filled with its input
/// vector (nearer objects painted last); background cells carry nuisance
/// values only.
pub fn gen_noisy_scene(cfg: &SynthConfig) -> Result<NoisyScene> {
    cfg.validate()?;
    if cfg.dim != GEOMETRIC_DIMS + cfg.nuisance_dims {
        return Err(Error::InvalidParam(format!(
            "dim must equal {GEOMETRIC_DIMS} geometric dims + nuisance_dims"
        )));
    }
    let layout = cfg.scene;
    if layout.height == 0 || layout.width == 0 || layout.objects_per_scene == 0 {
        return Err(Error::InvalidParam("scene layout must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    let (lo, hi) = cfg.depth_range;

    let mut depths = Vec::with_capacity(cfg.n);
    let mut inputs = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let z = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut v = Vec::with_capacity(cfg.dim);
        v.extend(geometric_inputs(z, lo));
        for _ in 0..cfg.nuisance_dims {
            v.push(rng.random_range(-1.0..1.0));
        }
        if cfg.noise_sigma > 0.0 {
            for x in v.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        depths.push(z);
        inputs.push(v);
    }

    let (h, w) = (layout.height, layout.width);
    let max_side = (h.min(w) / 2).max(1);
    let mut scenes = Vec::new();
    for chunk_start in (0..cfg.n).step_by(layout.objects_per_scene) {
        let chunk_end = (chunk_start + layout.objects_per_scene).min(cfg.n);
        let mut input = FeatureMap::zeros(cfg.dim, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in GEOMETRIC_DIMS..cfg.dim {
                    input.set(c, y, x, rng.random_range(-1.0..1.0));
                }
            }
        }
        let mut placed: Vec<(usize, ObjectAnnotation)> = Vec::new();
        for obj in chunk_start..chunk_end {
            let z = depths[obj];
            let side = ((layout.box_scale / z).round() as usize).clamp(1, max_side);
            let x0 = rng.random_range(0..=w - side);
            let y0 = rng.random_range(0..=h - side);
            let bbox = BoundingBox { x0, y0, x1: x0 + side, y1: y0 + side };
            placed.push((
                obj,
                ObjectAnnotation {
                    u: x0 + side / 2,
                    v: y0 + side / 2,
                    depth: z,
                    bbox,
                },
            ));
        }
        let mut paint: Vec<&(usize, ObjectAnnotation)> = placed.iter().collect();
        paint.sort_by(|a, b| b.1.depth.total_cmp(&a.1.depth).then(a.0.cmp(&b.0)));
        for (obj, ann) in paint {
            for y in ann.bbox.y0..ann.bbox.y1 {
                for x in ann.bbox.x0..ann.bbox.x1 {
                    for (c, &val) in inputs[*obj].iter().enumerate() {
                        input.set(c, y, x, val);
                    }
                }
            }
        }
        scenes.push(SceneMap {
            input,
            objects: placed.iter().map(|(o, _)| *o).collect(),
            annotations: placed.into_iter().map(|(_, a)| a).collect(),
        });
    }
    Ok(NoisyScene { inputs, depths, scenes })
}
