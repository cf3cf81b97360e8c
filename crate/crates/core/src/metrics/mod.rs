//! Shape-variation, bias and correlation statistics.

mod evaluate;
pub mod report;

pub use evaluate::{evaluate, Correlation, Correlations, EvalRecord, EvalReport, EvalSettings, Heatmap};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::{point_distance, Shape};

/// Mean shape of a sample set and the spread of each point around it.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationReport<T = f64> {
    pub mean_shape: Shape<T>,
    /// `(1/K) Σ_k ‖s⁽ᵏ⁾[j] − avg[j]‖` for each point `j`.
    pub per_point_variation: Vec<T>,
    /// Mean of `per_point_variation`.
    pub scalar_variation: T,
}

pub fn shape_variation<T: Scalar>(samples: &[Shape<T>]) -> Result<VariationReport<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("shape_variation of an empty sample set"));
    }
    let mean_shape = Shape::mean(samples)?;
    let k = T::of(samples.len() as f64);
    let per_point_variation: Vec<T> = mean_shape
        .points()
        .iter()
        .enumerate()
        .map(|(j, &avg)| samples.iter().map(|s| point_distance(s.points()[j], avg)).sum::<T>() / k)
        .collect();
    let scalar_variation = if per_point_variation.is_empty() {
        T::zero()
    } else {
        per_point_variation.iter().copied().sum::<T>() / T::of(per_point_variation.len() as f64)
    };
    Ok(VariationReport { mean_shape, per_point_variation, scalar_variation })
}

/// Mean pointwise distance to the consensus shape.
pub fn bias<T: Scalar>(s: &Shape<T>, s_star: &Shape<T>) -> Result<T> {
    s.check_same_len(s_star, "bias")?;
    if s.is_empty() {
        return Ok(T::zero());
    }
    let total: T = s.points().iter().zip(s_star.points()).map(|(&a, &b)| point_distance(a, b)).sum();
    Ok(total / T::of(s.len() as f64))
}

/// Pearson correlation. Series names are only used in error messages.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    correlation_named(xs, ys, ("xs", "ys"))
}

pub fn correlation_named(xs: &[f64], ys: &[f64], names: (&'static str, &'static str)) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(format!("correlation needs two equal series of length ≥ 2, got {} and {}", xs.len(), ys.len())));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative threshold so that a constant series with rounding noise is still degenerate.
    let degenerate = |s: f64, m: f64| s <= (1e-24 * n) * (1.0 + m * m);
    if degenerate(sxx, mx) {
        return Err(Error::ZeroVariance(names.0));
    }
    if degenerate(syy, my) {
        return Err(Error::ZeroVariance(names.1));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_have_zero_variation() {
        let s = Shape::new(vec![[0.1, 0.2], [0.4, 0.9]]);
        let r = shape_variation(&[s.clone(), s.clone(), s]).unwrap();
        assert_eq!(r.scalar_variation, 0.0);
    }

    #[test]
    fn two_point_variation_by_hand() {
        let r = shape_variation(&[Shape::new(vec![[0.0, 0.0]]), Shape::new(vec![[2.0, 0.0]])]).unwrap();
        assert_eq!(r.mean_shape.points(), &[[1.0, 0.0]]);
        assert_eq!(r.scalar_variation, 1.0);
        assert!(shape_variation::<f64>(&[]).is_err());
    }

    #[test]
    fn bias_examples() {
        let s = Shape::new(vec![[0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(bias(&s, &s).unwrap(), 0.0);
        assert_eq!(bias(&s.translated(3.0, 4.0), &s).unwrap(), 5.0);
        assert!(bias(&s, &Shape::new(vec![[0.0, 0.0]])).is_err());
    }

    #[test]
    fn correlation_examples() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        assert!((correlation(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((correlation(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        // Hand computation: x̄ = 3, ȳ = 4, Sxy = 9, Sxx = 10, Syy = 10 → r = 0.9.
        let r = correlation(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 3.0, 5.0, 6.0]).unwrap();
        assert!((r - 0.9).abs() < 1e-12);
        assert!(matches!(correlation_named(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], ("bias", "var")), Err(Error::ZeroVariance("bias"))));
        assert!(correlation(&[1.0], &[1.0]).is_err());
    }
}
