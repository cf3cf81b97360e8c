use std::f64::consts::TAU;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Image, Record, Split};
use crate::error::{Error, Result};
use crate::matching::ExpertSet;
use crate::rng::{Seeds, Stream};
use crate::shape::Shape;

/// Generator settings shared by every scene of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub j: usize,
    pub height: usize,
    pub width: usize,
    pub experts: usize,
    /// Expert displacement standard deviation per unit ambiguity, in
    /// normalized image units.
    pub noise_unit: f64,
    /// Image blur sigma in pixels is `blur_base + blur_per_ambiguity · a`.
    pub blur_base: f64,
    pub blur_per_ambiguity: f64,
    /// Disk-to-background contrast is `contrast / (1 + contrast_decay · a)`.
    pub contrast: f64,
    pub contrast_decay: f64,
    /// Additive pixel noise standard deviation is `pixel_noise · (1 + a)`.
    pub pixel_noise: f64,
    /// Ambiguity scalars assigned to scenes in rotation.
    pub ambiguity_levels: Vec<f64>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            j: 176,
            height: 64,
            width: 64,
            experts: 3,
            noise_unit: 0.012,
            blur_base: 0.5,
            blur_per_ambiguity: 1.5,
            contrast: 0.6,
            contrast_decay: 1.5,
            pixel_noise: 0.04,
            ambiguity_levels: vec![0.5, 1.0, 2.0],
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.j < 3 || self.height < 2 || self.width < 2 || self.experts == 0 {
            return Err(Error::invalid("scenes need j ≥ 3, sides ≥ 2 and at least one expert"));
        }
        if self.ambiguity_levels.is_empty() || self.ambiguity_levels.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::invalid("ambiguity levels must be a nonempty list of nonnegative values"));
        }
        Ok(())
    }
}

/// Random draws behind one consensus contour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub exponent: f64,
    pub rotation: f64,
    /// `(amplitude, phase)` of radial harmonics 2, 3, 4.
    pub harmonics: Vec<(f64, f64)>,
    pub ambiguity: f64,
    pub blur_sigma: f64,
    pub contrast: f64,
    pub pixel_noise: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub experts: ExpertSet<f64>,
    pub meta: SceneMeta,
}

fn contour(meta: &SceneMeta, j: usize) -> Vec<[f64; 2]> {
    let (sin_r, cos_r) = meta.rotation.sin_cos();
    let e = 2.0 / meta.exponent;
    (0..j)
        .map(|i| {
            let t = TAU * i as f64 / j as f64;
            let (s, c) = t.sin_cos();
            let radial = 1.0 + meta.harmonics.iter().enumerate().map(|(k, &(a, ph))| a * ((k + 2) as f64 * t + ph).cos()).sum::<f64>();
            let x = meta.semi_axes[0] * c.signum() * c.abs().powf(e) * radial;
            let y = meta.semi_axes[1] * s.signum() * s.abs().powf(e) * radial;
            [meta.center[0] + cos_r * x - sin_r * y, meta.center[1] + sin_r * x + cos_r * y]
        })
        .collect()
}

/// Outward unit normals and unsigned curvature of a closed, counter-clockwise polygon.
fn normals_and_curvature(points: &[[f64; 2]]) -> (Vec<[f64; 2]>, Vec<f64>) {
    let j = points.len();
    let mut normals = Vec::with_capacity(j);
    let mut curvature = Vec::with_capacity(j);
    for i in 0..j {
        let p = points[(i + j - 1) % j];
        let q = points[i];
        let r = points[(i + 1) % j];
        let (tx, ty) = (r[0] - p[0], r[1] - p[1]);
        let len = tx.hypot(ty).max(1e-12);
        normals.push([ty / len, -tx / len]);
        let (a, b) = ([q[0] - p[0], q[1] - p[1]], [r[0] - q[0], r[1] - q[1]]);
        let turn = (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
        curvature.push(turn.abs() / (0.5 * len));
    }
    (normals, curvature)
}

/// Smooth periodic noise along the contour with unit standard deviation.
///
/// Harmonic `k` has a squared-exponential spectral weight, so the noise is
/// dominated by dilation and the first few bends of the contour.
fn smooth_periodic_noise(j: usize, rng: &mut impl Rng) -> Vec<f64> {
    const HARMONICS: usize = 5;
    let weight = |k: usize| (-((k * k) as f64) / 4.0).exp();
    let coeffs: Vec<(f64, f64, f64)> = (0..HARMONICS)
        .map(|k| {
            let w = weight(k);
            let b = if k == 0 { 0.0 } else { w * rng.sample::<f64, _>(StandardNormal) };
            (w * rng.sample::<f64, _>(StandardNormal), b, k as f64)
        })
        .collect();
    // Per-point variance: w₀² + Σ_{k≥1} w_k² (cos² + sin² terms average to w_k²).
    let norm = (0..HARMONICS).map(|k| weight(k).powi(2)).sum::<f64>().sqrt();
    (0..j)
        .map(|i| {
            let t = TAU * i as f64 / j as f64;
            coeffs.iter().map(|&(a, b, k)| a * (k * t).cos() + b * (k * t).sin()).sum::<f64>() / norm
        })
        .collect()
}

fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut k = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[k]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        k = i;
    }
    inside
}

fn gaussian_blur(img: &mut Image, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let (h, w) = (img.height as isize, img.width as isize);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, d) in (-radius..=radius).enumerate() {
                    let (xx, yy) = if horizontal { ((x + d).clamp(0, w - 1), y) } else { (x, (y + d).clamp(0, h - 1)) };
                    acc += kernel[k] * src[(yy * w + xx) as usize] as f64;
                }
                out[(y * w + x) as usize] = (acc / total) as f32;
            }
        }
        out
    };
    let horizontal = pass(&img.pixels, true);
    img.pixels = pass(&horizontal, false);
}

/// Moves each point along its normal by curvature-weighted smooth noise,
/// clamped to three noise units.
fn displace(
    contour: &[[f64; 2]],
    normals: &[[f64; 2]],
    weight: &[f64],
    amplitude: f64,
    rng: &mut impl Rng,
) -> Vec<[f64; 2]> {
    let noise = smooth_periodic_noise(contour.len(), rng);
    contour
        .iter()
        .zip(normals)
        .zip(noise.iter().zip(weight))
        .map(|((p, n), (&d, &w))| {
            let offset = amplitude * (w * d).clamp(-3.0, 3.0);
            [p[0] + offset * n[0], p[1] + offset * n[1]]
        })
        .collect()
}

/// Anti-aliased filled contour over a textured background, blurred and noised.
fn render(params: &SceneParams, contour: &[[f64; 2]], meta: &SceneMeta, rng: &mut impl Rng) -> Image {
    const SUPER: usize = 4;
    let (h, w) = (params.height, params.width);
    let phase: [f64; 2] = [rng.random::<f64>() * TAU, rng.random::<f64>() * TAU];
    let mut img = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut covered = 0;
            for sy in 0..SUPER {
                for sx in 0..SUPER {
                    let u = (x as f64 + (sx as f64 + 0.5) / SUPER as f64) / w as f64;
                    let v = (y as f64 + (sy as f64 + 0.5) / SUPER as f64) / h as f64;
                    covered += point_in_polygon(u, v, contour) as usize;
                }
            }
            let frac = covered as f64 / (SUPER * SUPER) as f64;
            let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            let texture = 0.05 * (3.0 * TAU * u + phase[0]).sin() * (2.0 * TAU * v + phase[1]).cos();
            img.pixels[y * w + x] = (0.2 + texture + meta.contrast * frac) as f32;
        }
    }
    gaussian_blur(&mut img, meta.blur_sigma);
    for p in &mut img.pixels {
        let n: f64 = rng.sample(StandardNormal);
        *p = (*p as f64 + meta.pixel_noise * n).clamp(0.0, 1.0) as f32;
    }
    img
}

/// One disk-like scene with `params.experts` noisy annotations.
pub fn generate_scene(params: &SceneParams, ambiguity: f64, rng: &mut impl Rng) -> Result<SyntheticScene> {
    params.validate()?;
    if !(ambiguity >= 0.0) {
        return Err(Error::invalid(format!("ambiguity must be nonnegative, got {ambiguity}")));
    }
    let meta = SceneMeta {
        center: [0.5 + rng.random_range(-0.05..0.05), 0.5 + rng.random_range(-0.05..0.05)],
        semi_axes: [rng.random_range(0.25..0.34), rng.random_range(0.12..0.19)],
        exponent: rng.random_range(2.5..4.0),
        rotation: rng.random_range(-0.2..0.2),
        harmonics: (0..3).map(|_| (rng.random_range(0.0..0.04), rng.random_range(0.0..TAU))).collect(),
        ambiguity,
        blur_sigma: params.blur_base + params.blur_per_ambiguity * ambiguity,
        contrast: params.contrast / (1.0 + params.contrast_decay * ambiguity),
        pixel_noise: params.pixel_noise * (1.0 + ambiguity),
    };
    let consensus = contour(&meta, params.j);
    let (normals, curvature) = normals_and_curvature(&consensus);
    let mean_curv = curvature.iter().sum::<f64>() / curvature.len() as f64;
    let weight: Vec<f64> = curvature.iter().map(|k| (0.5 + 0.5 * k / mean_curv.max(1e-12)).min(2.5)).collect();
    let amplitude = ambiguity * params.noise_unit;
    let experts = (0..params.experts).map(|_| Shape::new(displace(&consensus, &normals, &weight, amplitude, rng))).collect();
    let image = render(params, &consensus, &meta, rng);
    let experts = ExpertSet::new(experts, Shape::new(consensus))?;
    Ok(SyntheticScene { image, experts, meta })
}

/// `scenes` scenes cycling through the ambiguity levels, split by scene.
pub fn generate_dataset(params: &SceneParams, scenes: usize, train_fraction: f64, seed: u64) -> Result<Dataset> {
    params.validate()?;
    if scenes == 0 || !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::invalid("need at least one scene and a train fraction in (0, 1]"));
    }
    let seeds = Seeds::new(seed);
    let levels = &params.ambiguity_levels;
    let mut order: Vec<usize> = (0..scenes).collect();
    order.shuffle(&mut seeds.rng(Stream::Data, &[u64::MAX]));
    let train_count = ((scenes as f64 * train_fraction).round() as usize).clamp(1, scenes);
    let mut split = vec![Split::Test; scenes];
    for &i in &order[..train_count] {
        split[i] = Split::Train;
    }
    let records = (0..scenes)
        .map(|i| {
            let ambiguity = levels[i % levels.len()];
            let scene = generate_scene(params, ambiguity, &mut seeds.rng(Stream::Data, &[i as u64]))?;
            Ok(Record { id: format!("scene{i:04}"), image: scene.image, experts: scene.experts, ambiguity, split: split[i] })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { records, j: params.j, height: params.height, width: params.width, params: params.clone() })
}
