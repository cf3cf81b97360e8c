//! Point-correspondence contours.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ordered 2D contour; index `j` denotes the same location on every shape
/// of a dataset. Coordinates are image-normalized (`[0,1]²`).
#[derive(Clone, Debug, PartialEq)]
pub struct Shape<T = f64> {
    points: Vec<[T; 2]>,
}

impl<T: Scalar> Shape<T> {
    pub fn new(points: Vec<[T; 2]>) -> Self {
        Self { points }
    }

    /// From an interleaved `[x0, y0, x1, y1, ...]` buffer.
    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::invalid(format!("odd coordinate count {}", flat.len())));
        }
        Ok(Self { points: flat.chunks(2).map(|p| [p[0], p[1]]).collect() })
    }

    pub fn points(&self) -> &[[T; 2]] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[T; 2]] {
        &mut self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Shape<U> {
        Shape { points: self.points.iter().map(|p| [U::of(p[0].as_f64()), U::of(p[1].as_f64())]).collect() }
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self { points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect() }
    }

    pub fn check_same_len(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch { op, lhs: vec![self.len(), 2], rhs: vec![other.len(), 2] });
        }
        Ok(())
    }

    /// Pointwise average of a non-empty set of equal-length shapes.
    ///
    /// Accumulates offsets from the first shape, so a set of identical
    /// shapes averages to exactly that shape.
    pub fn mean(shapes: &[Shape<T>]) -> Result<Self> {
        let first = shapes.first().ok_or_else(|| Error::invalid("mean of no shapes"))?;
        let mut acc = vec![[T::zero(); 2]; first.len()];
        for s in shapes {
            first.check_same_len(s, "mean_shape")?;
            for ((a, p), o) in acc.iter_mut().zip(&s.points).zip(&first.points) {
                a[0] += p[0] - o[0];
                a[1] += p[1] - o[1];
            }
        }
        let k = T::of(shapes.len() as f64);
        let points = acc.into_iter().zip(&first.points).map(|([x, y], o)| [o[0] + x / k, o[1] + y / k]).collect();
        Ok(Self { points })
    }
}

#[inline]
pub(crate) fn point_distance<T: Scalar>(a: [T; 2], b: [T; 2]) -> T {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
