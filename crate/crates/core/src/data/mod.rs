//! Synthetic multi-annotator shape data: scene generation, statistical
//! shape models, thin-plate-spline augmentation and on-disk datasets.

mod augment;
mod io;
mod scene;
mod ssm;
mod tps;

pub use augment::{augment, AugmentSettings};
pub use io::{read_dataset, read_image, read_shape_csv, write_dataset, write_image, write_shape_csv, Manifest, ManifestRecord, MANIFEST_VERSION};
pub use scene::{generate_dataset, generate_scene, SceneParams, SyntheticScene};
pub use ssm::{fit_ssm, sample_ssm, StatisticalShapeModel};
pub use tps::{control_points, tps_warp, ThinPlateSpline, WarpResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::ExpertSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::ShapeMismatch { op: "image", lhs: vec![height, width], rhs: vec![pixels.len()] });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// `[1, 1, H, W]` network input.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(vec![1, 1, self.height, self.width], self.pixels.iter().map(|&p| T::of(p as f64)).collect())
            .expect("consistent")
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer positions), clamped to the border.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
        let p = |yy: usize, xx: usize| self.get(yy, xx) as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One annotated image.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub image: Image,
    pub experts: ExpertSet<f64>,
    /// Scale of annotator disagreement for this image.
    pub ambiguity: f64,
    pub split: Split,
}

/// In-memory dataset with its generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub j: usize,
    pub height: usize,
    pub width: usize,
    pub params: SceneParams,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn split_owned(&self, split: Split) -> Vec<Record> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }
}
