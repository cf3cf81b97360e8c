use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::shape::Shape;

/// PCA shape model: mean plus orthonormal modes with their variances.
#[derive(Clone, Debug, PartialEq)]
pub struct StatisticalShapeModel {
    pub mean_shape: Shape<f64>,
    /// Retained principal directions, each of length `2J`.
    pub modes: Vec<Vec<f64>>,
    /// Eigenvalues of the retained modes, nonincreasing.
    pub mode_variances: Vec<f64>,
    /// Sum of all eigenvalues of the sample covariance.
    pub total_variance: f64,
}

impl StatisticalShapeModel {
    pub fn retained_fraction(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.mode_variances.iter().sum::<f64>() / self.total_variance
    }

    /// `mean + Σ b_i·mode_i`.
    pub fn shape_from(&self, b: &[f64]) -> Result<Shape<f64>> {
        if b.len() != self.modes.len() {
            return Err(Error::ShapeMismatch { op: "ssm coefficients", lhs: vec![self.modes.len()], rhs: vec![b.len()] });
        }
        let mut flat = self.mean_shape.to_flat();
        for (mode, &bi) in self.modes.iter().zip(b) {
            for (f, m) in flat.iter_mut().zip(mode) {
                *f += bi * m;
            }
        }
        Shape::from_flat(&flat)
    }
}

/// PCA on the mean-centered `2J` vectors, keeping the fewest modes whose
/// eigenvalues reach `variance_fraction` of the total.
pub fn fit_ssm(shapes: &[Shape<f64>], variance_fraction: f64) -> Result<StatisticalShapeModel> {
    if shapes.len() < 2 {
        return Err(Error::invalid(format!("fit_ssm needs at least 2 shapes, got {}", shapes.len())));
    }
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::invalid(format!("variance fraction must lie in (0, 1], got {variance_fraction}")));
    }
    let mean_shape = Shape::mean(shapes)?;
    let mean = DVector::from_vec(mean_shape.to_flat());
    let dim = mean.len();
    let flats: Vec<Vec<f64>> = shapes.iter().map(Shape::to_flat).collect();
    let centered = DMatrix::from_fn(dim, shapes.len(), |r, c| flats[c][r] - mean[r]);
    let cov = &centered * centered.transpose() / (shapes.len() - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total_variance: f64 = values.iter().sum();
    // Anything below this is eigensolver round-off, not variation.
    let floor = total_variance * 1e-12;
    let mut kept = 0;
    let mut acc = 0.0;
    while kept < dim && values[kept] > floor && acc < variance_fraction * total_variance {
        acc += values[kept];
        kept += 1;
    }
    let modes = order[..kept].iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    Ok(StatisticalShapeModel { mean_shape, modes, mode_variances: values[..kept].to_vec(), total_variance })
}

/// Mean plus modes weighted by `b_i ~ Normal(0, variance_i)` truncated to ±3σ.
pub fn sample_ssm(ssm: &StatisticalShapeModel, rng: &mut impl Rng) -> Shape<f64> {
    let b: Vec<f64> = ssm
        .mode_variances
        .iter()
        .map(|&v| {
            let sd = v.sqrt();
            let normal = Normal::new(0.0, sd).expect("finite variance");
            loop {
                let x: f64 = normal.sample(rng);
                if x.abs() <= 3.0 * sd {
                    break x;
                }
            }
        })
        .collect();
    ssm.shape_from(&b).expect("one coefficient per mode")
}
