//! Procedural stand-in for the robot cell.
//!
//! Generates cluttered-bin scenes under a top-down orthographic camera
//! (depth = vertical distance in mm), renders an RGB image with
//! per-material shading and a noisy structured-light depth image, and
//! simulates grasp attempts that yield single-pixel `(g, y, z)` labels,
//! the self-supervision source for training.
//!
//! Everything is a pure function of `(config, seed)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive, stream, StreamId};
use crate::tensor::Tensor;

/// In-band marker for pixels where the sensor returned nothing.
pub const INVALID_DEPTH_MM: f32 = 0.0;

/// Surface classes with distinct sensor behavior and appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Material {
    Matte,
    Shiny,
    Transparent,
    Mirror,
}

impl Material {
    pub const ALL: [Material; 4] = [
        Material::Matte,
        Material::Shiny,
        Material::Transparent,
        Material::Mirror,
    ];

    pub fn index(self) -> usize {
        match self {
            Material::Matte => 0,
            Material::Shiny => 1,
            Material::Transparent => 2,
            Material::Mirror => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Material::Matte => "matte",
            Material::Shiny => "shiny",
            Material::Transparent => "transparent",
            Material::Mirror => "mirror",
        }
    }
}

/// Sensor noise and grasp behavior of one material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    /// Std of the per-pixel Gaussian depth noise, mm.
    pub gaussian_noise_std_mm: f32,
    /// Probability that a pixel reports a gross error instead.
    pub gross_error_prob: f32,
    /// Magnitude range of gross errors, mm.
    pub gross_error_range_mm: (f32, f32),
    /// Probability that a gross error reads too far rather than too near.
    pub gross_far_prob: f32,
    /// Grip coefficient entering the grasp success model.
    pub grip: f32,
    /// Multiplier on the tooltip label noise for pokes on this material.
    pub label_noise_scale: f32,
}

/// Object shape and count ranges, all in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectRanges {
    pub count: (usize, usize),
    pub box_extent_mm: (f32, f32),
    pub cylinder_radius_mm: (f32, f32),
    pub height_mm: (f32, f32),
    pub cylinder_prob: f32,
}

/// Suction tooltip geometry and compliance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TooltipModel {
    /// Constant distance the cup compresses past the surface before
    /// pressure feedback stops the arm; biases every label.
    pub compliance_offset_mm: f32,
    pub radius_mm: f32,
}

impl Default for TooltipModel {
    fn default() -> Self {
        TooltipModel {
            compliance_offset_mm: 15.0,
            radius_mm: 17.0,
        }
    }
}

/// Logistic grasp-outcome model in local surface flatness and material
/// grip. On a flat matte surface the success probability equals
/// `base_rate` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessModel {
    pub base_rate: f32,
    pub flatness_weight: f32,
    pub grip_weight: f32,
}

/// Tooltip label noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelNoiseModel {
    pub sigma_success_mm: f32,
    pub sigma_fail_mm: f32,
    /// Probability of an early-retraction fault that shifts the label
    /// toward the camera by `outlier_range_mm`.
    pub outlier_prob: f32,
    pub outlier_range_mm: (f32, f32),
}

/// Full simulator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorConfig {
    pub height: usize,
    pub width: usize,
    pub floor_depth_mm: f32,
    /// Closest representable surface; object heights are capped so depth
    /// never rises above this.
    pub camera_min_mm: f32,
    pub pixel_size_mm: f32,
    pub objects: ObjectRanges,
    /// Sampling weights over [matte, shiny, transparent, mirror].
    pub material_weights: [f32; 4],
    pub materials: [MaterialModel; 4],
    pub invalid_pixel_prob: f32,
    pub tooltip: TooltipModel,
    pub labels: LabelNoiseModel,
    pub success: SuccessModel,
    /// Probability that a poke targets an object pixel rather than any
    /// pixel uniformly.
    pub poke_object_bias: f32,
}

impl SimulatorConfig {
    /// Household-goods bin: matte and shiny surfaces, mild sensor noise.
    pub fn consumer() -> Self {
        SimulatorConfig {
            height: 64,
            width: 64,
            floor_depth_mm: 600.0,
            camera_min_mm: 380.0,
            pixel_size_mm: 6.25,
            objects: ObjectRanges {
                count: (1, 7),
                box_extent_mm: (50.0, 160.0),
                cylinder_radius_mm: (25.0, 60.0),
                height_mm: (30.0, 150.0),
                cylinder_prob: 0.35,
            },
            material_weights: [0.72, 0.28, 0.0, 0.0],
            materials: [
                MaterialModel {
                    gaussian_noise_std_mm: 10.0,
                    gross_error_prob: 0.001,
                    gross_error_range_mm: (150.0, 600.0),
                    gross_far_prob: 0.6,
                    grip: 0.9,
                    label_noise_scale: 1.0,
                },
                MaterialModel {
                    gaussian_noise_std_mm: 18.0,
                    gross_error_prob: 0.02,
                    gross_error_range_mm: (150.0, 900.0),
                    gross_far_prob: 0.6,
                    grip: 0.55,
                    label_noise_scale: 1.0,
                },
                MaterialModel {
                    gaussian_noise_std_mm: 30.0,
                    gross_error_prob: 0.30,
                    gross_error_range_mm: (150.0, 2500.0),
                    gross_far_prob: 0.65,
                    grip: 0.35,
                    label_noise_scale: 1.0,
                },
                MaterialModel {
                    gaussian_noise_std_mm: 35.0,
                    gross_error_prob: 0.50,
                    gross_error_range_mm: (150.0, 3000.0),
                    gross_far_prob: 0.65,
                    grip: 0.5,
                    label_noise_scale: 1.0,
                },
            ],
            invalid_pixel_prob: 0.015,
            tooltip: TooltipModel::default(),
            labels: LabelNoiseModel {
                sigma_success_mm: 8.0,
                sigma_fail_mm: 20.0,
                outlier_prob: 0.005,
                outlier_range_mm: (50.0, 300.0),
            },
            success: SuccessModel {
                base_rate: 0.78,
                flatness_weight: 2.5,
                grip_weight: 3.0,
            },
            poke_object_bias: 0.75,
        }
    }

    /// Mirror/transparent-heavy bin with frequent gross sensor errors.
    pub fn adversarial() -> Self {
        let mut cfg = Self::consumer();
        cfg.material_weights = [0.22, 0.13, 0.35, 0.30];
        cfg.invalid_pixel_prob = 0.05;
        cfg
    }

    /// Material-dependent label noise with a mild sensor, for calibration
    /// studies: the conditional label variance per material class is known
    /// in closed form because the success rate is held constant.
    pub fn heteroscedastic() -> Self {
        let mut cfg = Self::consumer();
        cfg.material_weights = [0.3, 0.2, 0.25, 0.25];
        for m in &mut cfg.materials {
            m.gross_error_prob = 0.0;
            m.gaussian_noise_std_mm = 8.0;
        }
        cfg.materials[Material::Matte.index()].label_noise_scale = 0.6;
        cfg.materials[Material::Shiny.index()].label_noise_scale = 1.0;
        cfg.materials[Material::Transparent.index()].label_noise_scale = 2.2;
        cfg.materials[Material::Mirror.index()].label_noise_scale = 1.6;
        cfg.labels = LabelNoiseModel {
            sigma_success_mm: 12.0,
            sigma_fail_mm: 25.0,
            outlier_prob: 0.0,
            outlier_range_mm: (50.0, 300.0),
        };
        cfg.invalid_pixel_prob = 0.01;
        // Constant success probability: no flatness or grip modulation.
        cfg.success = SuccessModel {
            base_rate: 0.75,
            flatness_weight: 0.0,
            grip_weight: 0.0,
        };
        cfg
    }

    pub fn material(&self, m: Material) -> &MaterialModel {
        &self.materials[m.index()]
    }

    /// Closed-form conditional label variance for a material class, valid
    /// when the success model is constant (both weights zero).
    pub fn class_label_variance_mm2(&self, m: Material) -> f64 {
        let p = self.success.base_rate as f64;
        let s = self.material(m).label_noise_scale as f64;
        let ss = (self.labels.sigma_success_mm as f64).powi(2);
        let sf = (self.labels.sigma_fail_mm as f64).powi(2);
        s * s * (p * ss + (1.0 - p) * sf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("image dims must be positive"));
        }
        if !(self.labels.sigma_fail_mm > self.labels.sigma_success_mm)
            || self.labels.sigma_success_mm < 0.0
        {
            return Err(Error::config(
                "label noise requires sigma_fail > sigma_success >= 0",
            ));
        }
        for (i, m) in self.materials.iter().enumerate() {
            let (lo, hi) = m.gross_error_range_mm;
            if !(0.0..=5000.0).contains(&lo) || !(0.0..=5000.0).contains(&hi) || lo > hi {
                return Err(Error::config(format!(
                    "material {i}: gross error range must lie within [0, 5000] mm"
                )));
            }
            if !(0.0..=1.0).contains(&m.gross_error_prob)
                || !(0.0..=1.0).contains(&m.gross_far_prob)
            {
                return Err(Error::config(format!(
                    "material {i}: probabilities must be in [0,1]"
                )));
            }
        }
        if self.material_weights.iter().any(|&w| w < 0.0)
            || self.material_weights.iter().sum::<f32>() <= 0.0
        {
            return Err(Error::config(
                "material weights must be nonnegative and sum > 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.invalid_pixel_prob)
            || !(0.0..=1.0).contains(&self.poke_object_bias)
            || !(0.0..=1.0).contains(&self.labels.outlier_prob)
        {
            return Err(Error::config("probabilities must be in [0,1]"));
        }
        if self.camera_min_mm >= self.floor_depth_mm {
            return Err(Error::config("camera_min_mm must be above the floor"));
        }
        if self.objects.height_mm.1 > self.floor_depth_mm - self.camera_min_mm {
            return Err(Error::config("object heights exceed the camera clearance"));
        }
        if self.pixel_size_mm <= 0.0 {
            return Err(Error::config("pixel_size_mm must be positive"));
        }
        if !(0.0..1.0).contains(&self.success.base_rate) || self.success.base_rate <= 0.0 {
            return Err(Error::config("success base_rate must be in (0,1)"));
        }
        Ok(())
    }
}

/// A generated bin state with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    /// True depth per pixel, mm from the camera.
    pub ground_truth_mm: Vec<f32>,
    pub materials: Vec<Material>,
    /// Planar RGB in `[0,1]`, shape `[3,H,W]` row-major.
    pub rgb: Vec<f32>,
    pub object_count: usize,
    /// Set when placement retries ran out and fewer objects were placed.
    pub placement_truncated: bool,
    object_ids: Vec<u16>,
}

const NO_OBJECT: u16 = u16::MAX;

impl Scene {
    pub fn image_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![3, self.height, self.width], self.rgb.clone()).expect("scene rgb")
    }

    pub fn has_object_at(&self, row: usize, col: usize) -> bool {
        self.object_ids[row * self.width + col] != NO_OBJECT
    }
}

/// One self-supervised training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct PokeSample {
    pub height: usize,
    pub width: usize,
    /// Planar RGB `[3,H,W]` in `[0,1]`.
    pub rgb: Vec<f32>,
    /// Sensor depth `[H,W]` in mm, 0.0 marking invalid pixels.
    pub depth: Vec<f32>,
    pub row: usize,
    pub col: usize,
    pub success: bool,
    /// Tooltip depth label, mm.
    pub z_mm: f32,
    /// True depth map, attached only when generated for evaluation.
    pub ground_truth_mm: Option<Vec<f32>>,
}

impl PokeSample {
    pub fn image_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![3, self.height, self.width], self.rgb.clone()).expect("sample rgb")
    }

    pub fn depth_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, self.height, self.width], self.depth.clone()).expect("sample depth")
    }
}

#[derive(Debug, Clone, Copy)]
enum Footprint {
    Rect {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    },
    Circle {
        cx: f32,
        cy: f32,
        r: f32,
    },
}

impl Footprint {
    fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Footprint::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Footprint::Circle { cx, cy, r } => {
                let dx = x as f32 + 0.5 - cx;
                let dy = y as f32 + 0.5 - cy;
                dx * dx + dy * dy <= r * r
            }
        }
    }

    fn bounds(&self) -> (usize, usize, usize, usize) {
        match *self {
            Footprint::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Footprint::Circle { cx, cy, r } => (
                (cx - r).floor().max(0.0) as usize,
                (cy - r).floor().max(0.0) as usize,
                (cx + r).ceil() as usize,
                (cy + r).ceil() as usize,
            ),
        }
    }
}

struct PlacedObject {
    footprint: Footprint,
    height_mm: f32,
    material: Material,
    color: [f32; 3],
    highlight: (f32, f32),
}

/// Deterministic per-pixel hash in `[0,1)`, used for surface texture.
fn pixel_hash(seed: u64, x: usize, y: usize, salt: u64) -> f32 {
    let mut h = seed
        ^ salt.wrapping_mul(0x9e3779b97f4a7c15)
        ^ (x as u64).wrapping_mul(0x85ebca6b2b2ae35)
        ^ (y as u64).wrapping_mul(0xc2b2ae3d27d4eb4f);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51afd7ed558ccd);
    h ^= h >> 33;
    ((h >> 40) as f32) / (1u64 << 24) as f32
}

fn sample_material(rng: &mut impl Rng, weights: &[f32; 4]) -> Material {
    let total: f32 = weights.iter().sum();
    let mut t = rng.random_range(0.0..total);
    for m in Material::ALL {
        t -= weights[m.index()];
        if t < 0.0 {
            return m;
        }
    }
    Material::Mirror
}

/// Generates a bin state: objects placed without overlap, ground-truth
/// depth, material map, and a shaded RGB rendering in which brightness
/// rises as surfaces approach the camera (so color carries depth cues).
pub fn generate_scene(cfg: &SimulatorConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = stream(seed, StreamId::Scene);
    let (h, w) = (cfg.height, cfg.width);
    let n_target = rng.random_range(cfg.objects.count.0..=cfg.objects.count.1);

    let mut placed: Vec<PlacedObject> = Vec::with_capacity(n_target);
    let mut truncated = false;
    'objects: for _ in 0..n_target {
        for _attempt in 0..40 {
            let footprint = if rng.random_range(0.0..1.0f32) < cfg.objects.cylinder_prob {
                let r_px = rng
                    .random_range(cfg.objects.cylinder_radius_mm.0..=cfg.objects.cylinder_radius_mm.1)
                    / cfg.pixel_size_mm;
                let r_px = r_px.max(1.5);
                if 2.0 * r_px + 2.0 >= w.min(h) as f32 {
                    continue;
                }
                let cx = rng.random_range(r_px + 1.0..w as f32 - r_px - 1.0);
                let cy = rng.random_range(r_px + 1.0..h as f32 - r_px - 1.0);
                Footprint::Circle { cx, cy, r: r_px }
            } else {
                let ex = (rng
                    .random_range(cfg.objects.box_extent_mm.0..=cfg.objects.box_extent_mm.1)
                    / cfg.pixel_size_mm)
                    .round()
                    .max(2.0) as usize;
                let ey = (rng
                    .random_range(cfg.objects.box_extent_mm.0..=cfg.objects.box_extent_mm.1)
                    / cfg.pixel_size_mm)
                    .round()
                    .max(2.0) as usize;
                if ex + 2 >= w || ey + 2 >= h {
                    continue;
                }
                let x0 = rng.random_range(1..w - ex);
                let y0 = rng.random_range(1..h - ey);
                Footprint::Rect {
                    x0,
                    y0,
                    x1: x0 + ex,
                    y1: y0 + ey,
                }
            };
            let (bx0, by0, bx1, by1) = footprint.bounds();
            let overlaps = placed.iter().any(|p| {
                let (ox0, oy0, ox1, oy1) = p.footprint.bounds();
                bx0 < ox1 && ox0 < bx1 && by0 < oy1 && oy0 < by1
            });
            if overlaps {
                continue;
            }
            let material = sample_material(&mut rng, &cfg.material_weights);
            let height_mm = rng.random_range(cfg.objects.height_mm.0..=cfg.objects.height_mm.1);
            let hue = rng.random_range(0.0..1.0f32);
            let color = palette(material, hue);
            let highlight = (
                rng.random_range(0.25..0.75f32),
                rng.random_range(0.25..0.75f32),
            );
            placed.push(PlacedObject {
                footprint,
                height_mm,
                material,
                color,
                highlight,
            });
            continue 'objects;
        }
        truncated = true;
        break;
    }

    let mut depth = vec![cfg.floor_depth_mm; h * w];
    let mut materials = vec![Material::Matte; h * w];
    let mut ids = vec![NO_OBJECT; h * w];
    for (oid, obj) in placed.iter().enumerate() {
        let (x0, y0, x1, y1) = obj.footprint.bounds();
        for y in y0..y1.min(h) {
            for x in x0..x1.min(w) {
                if obj.footprint.contains(x, y) {
                    let at = y * w + x;
                    depth[at] = cfg.floor_depth_mm - obj.height_mm;
                    materials[at] = obj.material;
                    ids[at] = oid as u16;
                }
            }
        }
    }

    let rgb = render_rgb(cfg, seed, &placed, &depth, &ids, h, w);

    Ok(Scene {
        height: h,
        width: w,
        ground_truth_mm: depth,
        materials,
        rgb,
        object_count: placed.len(),
        placement_truncated: truncated,
        object_ids: ids,
    })
}

fn palette(material: Material, hue: f32) -> [f32; 3] {
    // Three-phase hue ramp, normalized to a constant albedo sum so that
    // shading, not object color, dominates pixel brightness.
    let comp = |phase: f32| {
        let t = (hue + phase).fract();
        0.25 + 0.7 * (1.0 - (2.0 * t - 1.0).abs())
    };
    let normalized = |target: f32| {
        let c = [comp(0.0), comp(1.0 / 3.0), comp(2.0 / 3.0)];
        let sum = c[0] + c[1] + c[2];
        [
            (c[0] * target / sum).min(1.0),
            (c[1] * target / sum).min(1.0),
            (c[2] * target / sum).min(1.0),
        ]
    };
    match material {
        Material::Matte => normalized(2.1),
        Material::Shiny => normalized(2.3),
        // Washed-out pale tint; the floor shows through.
        Material::Transparent => [0.78, 0.80, 0.82],
        Material::Mirror => [0.62, 0.63, 0.66],
    }
}

#[allow(clippy::too_many_arguments)]
fn render_rgb(
    cfg: &SimulatorConfig,
    seed: u64,
    placed: &[PlacedObject],
    depth: &[f32],
    ids: &[u16],
    h: usize,
    w: usize,
) -> Vec<f32> {
    let mut rgb = vec![0.0f32; 3 * h * w];
    let height_span = (cfg.floor_depth_mm - cfg.camera_min_mm).max(1.0);
    let floor_gray = 0.42;
    for y in 0..h {
        for x in 0..w {
            let at = y * w + x;
            // Brightness rises toward the camera: the dominant depth cue.
            let lift = (cfg.floor_depth_mm - depth[at]) / height_span;
            let intensity = 0.42 + 0.52 * lift;
            let oid = ids[at];
            let mut px = if oid == NO_OBJECT {
                let jitter = 0.92 + 0.16 * pixel_hash(seed, x, y, 1);
                let g = floor_gray * intensity * jitter;
                [g, g, g]
            } else {
                let obj = &placed[oid as usize];
                let n = pixel_hash(seed, x, y, 2 + oid as u64);
                match obj.material {
                    Material::Matte => {
                        let t = 0.95 + 0.1 * n;
                        [
                            obj.color[0] * intensity * t,
                            obj.color[1] * intensity * t,
                            obj.color[2] * intensity * t,
                        ]
                    }
                    Material::Shiny => {
                        let (bx0, by0, bx1, by1) = obj.footprint.bounds();
                        let fx = (x as f32 - bx0 as f32) / (bx1 - bx0).max(1) as f32;
                        let fy = (y as f32 - by0 as f32) / (by1 - by0).max(1) as f32;
                        let d2 = (fx - obj.highlight.0).powi(2) + (fy - obj.highlight.1).powi(2);
                        let spec = (-d2 / 0.02).exp();
                        let t = 0.8 + 0.15 * n;
                        [
                            (obj.color[0] * intensity * t + 0.6 * spec).min(1.0),
                            (obj.color[1] * intensity * t + 0.6 * spec).min(1.0),
                            (obj.color[2] * intensity * t + 0.6 * spec).min(1.0),
                        ]
                    }
                    Material::Transparent => {
                        // Floor shows through a pale tint plus clutter
                        // speckle; brightness still tracks height.
                        let speckle = 0.75 + 0.5 * n;
                        [
                            (0.45 * obj.color[0] + 0.35 * floor_gray) * intensity * speckle,
                            (0.45 * obj.color[1] + 0.35 * floor_gray) * intensity * speckle,
                            (0.45 * obj.color[2] + 0.35 * floor_gray) * intensity * speckle,
                        ]
                    }
                    Material::Mirror => {
                        // High-frequency clutter reflections, modulated by
                        // the same shading so RGB still carries depth.
                        let sparkle = 0.35 + 0.85 * n;
                        [
                            obj.color[0] * intensity * sparkle,
                            obj.color[1] * intensity * sparkle,
                            obj.color[2] * intensity * sparkle,
                        ]
                    }
                }
            };
            // Darken object boundaries.
            let edge = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        return false;
                    }
                    ids[ny as usize * w + nx as usize] != oid
                });
            if edge {
                for c in &mut px {
                    *c *= 0.55;
                }
            }
            for (c, v) in px.iter().enumerate() {
                rgb[c * h * w + at] = v.clamp(0.0, 1.0);
            }
        }
    }
    rgb
}

/// Renders one noisy sensor frame of a scene.
///
/// Per pixel: with `invalid_pixel_prob` the invalid marker; otherwise with
/// the material's `gross_error_prob` a gross reading `Z +/- U(range)` (sign
/// drawn per pixel); otherwise `Z + N(0, sigma_material)`. Depths clamp at
/// 1 mm.
pub fn render_sensor(scene: &Scene, cfg: &SimulatorConfig, seed: u64) -> Vec<f32> {
    let mut rng = stream(seed, StreamId::Sensor);
    let mut out = Vec::with_capacity(scene.ground_truth_mm.len());
    for (at, &z) in scene.ground_truth_mm.iter().enumerate() {
        if rng.random_range(0.0..1.0f32) < cfg.invalid_pixel_prob {
            out.push(INVALID_DEPTH_MM);
            continue;
        }
        let m = cfg.material(scene.materials[at]);
        let value = if rng.random_range(0.0..1.0f32) < m.gross_error_prob {
            let magnitude = rng.random_range(m.gross_error_range_mm.0..=m.gross_error_range_mm.1);
            let sign = if rng.random_range(0.0..1.0f32) < m.gross_far_prob {
                1.0
            } else {
                -1.0
            };
            z + sign * magnitude
        } else {
            let n: f64 = StandardNormal.sample(&mut rng);
            z + m.gaussian_noise_std_mm * n as f32
        };
        out.push(value.max(1.0));
    }
    out
}

/// Fraction of the tooltip-sized window around `g` whose true depth lies
/// within 5 mm of the poke pixel's depth.
fn local_flatness(scene: &Scene, cfg: &SimulatorConfig, row: usize, col: usize) -> f32 {
    let r = (cfg.tooltip.radius_mm / cfg.pixel_size_mm).ceil().max(1.0) as i64;
    let z0 = scene.ground_truth_mm[row * scene.width + col];
    let mut total = 0u32;
    let mut flat = 0u32;
    for dy in -r..=r {
        for dx in -r..=r {
            let y = row as i64 + dy;
            let x = col as i64 + dx;
            if y < 0 || x < 0 || y >= scene.height as i64 || x >= scene.width as i64 {
                continue;
            }
            total += 1;
            if (scene.ground_truth_mm[y as usize * scene.width + x as usize] - z0).abs() <= 5.0 {
                flat += 1;
            }
        }
    }
    flat as f32 / total.max(1) as f32
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f32) -> f32 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Simulates one grasp attempt on a scene, rendering a fresh sensor frame
/// for the attempt.
///
/// The poke pixel is biased toward objects; the outcome follows the
/// logistic success model; the label is `Z[g] + compliance` plus
/// outcome-dependent noise, with a configured chance of an
/// early-retraction fault that pulls the label toward the camera.
pub fn sample_poke(
    scene: &Scene,
    cfg: &SimulatorConfig,
    seed: u64,
    with_ground_truth: bool,
) -> PokeSample {
    let depth = render_sensor(scene, cfg, derive(seed, 0x5e_a50e));
    let mut rng = stream(seed, StreamId::Poke);

    let object_pixels: Vec<usize> = (0..scene.ground_truth_mm.len())
        .filter(|&i| scene.object_ids[i] != NO_OBJECT)
        .collect();
    let at = if !object_pixels.is_empty() && rng.random_range(0.0..1.0f32) < cfg.poke_object_bias
    {
        object_pixels[rng.random_range(0..object_pixels.len())]
    } else {
        rng.random_range(0..scene.ground_truth_mm.len())
    };
    let (row, col) = (at / scene.width, at % scene.width);

    let material = cfg.material(scene.materials[at]);
    let matte_grip = cfg.material(Material::Matte).grip;
    let flatness = local_flatness(scene, cfg, row, col);
    let p_success = sigmoid(
        logit(cfg.success.base_rate)
            + cfg.success.flatness_weight * (flatness - 1.0)
            + cfg.success.grip_weight * (material.grip - matte_grip),
    );
    let success = rng.random_range(0.0..1.0f32) < p_success;

    let sigma = material.label_noise_scale
        * if success {
            cfg.labels.sigma_success_mm
        } else {
            cfg.labels.sigma_fail_mm
        };
    let noise: f64 = StandardNormal.sample(&mut rng);
    let mut z_mm =
        scene.ground_truth_mm[at] + cfg.tooltip.compliance_offset_mm + sigma * noise as f32;
    if cfg.labels.outlier_prob > 0.0 && rng.random_range(0.0..1.0f32) < cfg.labels.outlier_prob {
        z_mm -= rng.random_range(cfg.labels.outlier_range_mm.0..=cfg.labels.outlier_range_mm.1);
    }

    PokeSample {
        height: scene.height,
        width: scene.width,
        rgb: scene.rgb.clone(),
        depth,
        row,
        col,
        success,
        z_mm,
        ground_truth_mm: with_ground_truth.then(|| scene.ground_truth_mm.clone()),
    }
}

/// Generates `n_scenes * pokes_per_scene` samples deterministically, scene
/// by scene in index order.
pub fn generate_dataset(
    cfg: &SimulatorConfig,
    n_scenes: usize,
    pokes_per_scene: usize,
    seed: u64,
    with_ground_truth: bool,
) -> Result<Vec<PokeSample>> {
    if n_scenes == 0 || pokes_per_scene == 0 {
        return Err(Error::config("n_scenes and pokes_per_scene must be >= 1"));
    }
    let mut samples = Vec::with_capacity(n_scenes * pokes_per_scene);
    for s in 0..n_scenes {
        let scene_seed = derive(seed, s as u64);
        let scene = generate_scene(cfg, scene_seed)?;
        for k in 0..pokes_per_scene {
            let poke_seed = derive(scene_seed, 0x1000 + k as u64);
            samples.push(sample_poke(&scene, cfg, poke_seed, with_ground_truth));
        }
    }
    Ok(samples)
}
