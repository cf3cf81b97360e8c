//! Evaluation report files: per-image CSV, correlation summary JSON,
//! heatmap CSVs and color-mapped rasters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::evaluate::{Correlations, EvalRecord, EvalReport, Heatmap};
use super::VariationReport;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::shape::Shape;

pub const RECORDS_HEADER: &str = "id,ambiguity,var_gt,var_model,entropy,bias_best";

pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.9},{:.9},{:.9},{:.9}",
            r.id, r.ambiguity, r.var_gt, r.var_model, r.entropy, r.bias_best
        );
    }
    out
}

#[derive(Serialize)]
struct Means {
    var_gt: f64,
    var_model: f64,
    entropy: f64,
    bias_best: f64,
}

#[derive(Serialize)]
struct Failure<'a> {
    id: &'a str,
    error: &'a str,
}

#[derive(Serialize)]
struct Summary<'a> {
    images: usize,
    correlations: &'a Correlations,
    means: Option<Means>,
    failures: Vec<Failure<'a>>,
}

pub fn summary_json(report: &EvalReport) -> String {
    let n = report.records.len() as f64;
    let mean = |f: fn(&EvalRecord) -> f64| report.records.iter().map(f).sum::<f64>() / n;
    let means = (!report.records.is_empty()).then(|| Means {
        var_gt: mean(|r| r.var_gt),
        var_model: mean(|r| r.var_model),
        entropy: mean(|r| r.entropy),
        bias_best: mean(|r| r.bias_best),
    });
    let summary = Summary {
        images: report.records.len(),
        correlations: &report.correlations,
        means,
        failures: report.failures.iter().map(|(id, error)| Failure { id, error }).collect(),
    };
    serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"
}

/// `j,x,y,variation` for each point of the mean shape.
pub fn heatmap_csv(v: &VariationReport<f64>) -> String {
    let mut out = String::from("j,x,y,variation\n");
    for (j, (p, var)) in v.mean_shape.points().iter().zip(&v.per_point_variation).enumerate() {
        let _ = writeln!(out, "{j},{:.9},{:.9},{:.9}", p[0], p[1], var);
    }
    out
}

/// Blue → green → yellow → red ramp over `t ∈ [0, 1]`.
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 4] = [[40.0, 60.0, 200.0], [40.0, 190.0, 90.0], [240.0, 220.0, 40.0], [220.0, 40.0, 30.0]];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn dot(img: &mut RgbImage, p: [f64; 2], radius: i64, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = ((p[0] * w as f64) as i64, (p[1] * h as f64) as i64);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (x, y) = (cx + dx, cy + dy);
            if dx * dx + dy * dy <= radius * radius && (0..w).contains(&x) && (0..h).contains(&y) {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

/// Mean shape drawn as dots colored by per-point variation relative to `max`.
pub fn heatmap_raster(v: &VariationReport<f64>, max: f64, size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    for (p, var) in v.mean_shape.points().iter().zip(&v.per_point_variation) {
        let t = if max > 0.0 { var / max } else { 0.0 };
        dot(&mut img, *p, (size / 96).max(1) as i64, colormap(t));
    }
    img
}

/// All shapes overlaid on a white canvas, one color per shape.
pub fn overlay_raster(shapes: &[Shape<f64>], size: u32) -> RgbImage {
    draw_shapes(RgbImage::from_pixel(size, size, Rgb([255, 255, 255])), shapes)
}

/// Shapes overlaid on a grayscale image upscaled by an integer `scale`.
pub fn overlay_on_image(image: &Image, shapes: &[Shape<f64>], scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let canvas = RgbImage::from_fn(image.width as u32 * scale, image.height as u32 * scale, |x, y| {
        let v = (image.get((y / scale) as usize, (x / scale) as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    draw_shapes(canvas, shapes)
}

fn draw_shapes(mut img: RgbImage, shapes: &[Shape<f64>]) -> RgbImage {
    let n = shapes.len().max(2) as f64;
    for (i, s) in shapes.iter().enumerate() {
        let color = colormap(i as f64 / (n - 1.0));
        for p in s.points() {
            dot(&mut img, *p, 0, color);
        }
    }
    img
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(Error::io(path))
}

/// Writes `<id>_gt.csv`, `<id>_model.csv` and matching PNGs sharing one color scale.
pub fn write_heatmap(dir: &Path, h: &Heatmap, size: u32) -> Result<()> {
    let max = h.gt.per_point_variation.iter().chain(&h.model.per_point_variation).fold(0.0f64, |m, v| m.max(*v));
    for (side, v) in [("gt", &h.gt), ("model", &h.model)] {
        write(&dir.join(format!("{}_{side}.csv", h.id)), &heatmap_csv(v))?;
        heatmap_raster(v, max, size).save(dir.join(format!("{}_{side}.png", h.id)))?;
    }
    Ok(())
}

/// `records.csv`, `summary.json` and a `heatmaps/` directory under `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir.join("heatmaps")).map_err(Error::io(dir))?;
    write(&dir.join("records.csv"), &records_csv(&report.records))?;
    write(&dir.join("summary.json"), &summary_json(report))?;
    for h in &report.heatmaps {
        write_heatmap(&dir.join("heatmaps"), h, 256)?;
    }
    Ok(())
}
