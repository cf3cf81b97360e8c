use nalgebra::DMatrix;

use super::Image;
use crate::error::{Error, Result};
use crate::shape::Shape;

/// `U(r) = r² log r` with `U(0) = 0`, evaluated from `r²`.
fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

/// 2D thin-plate spline `f(p) = a₀ + A·p + Σ w_i U(‖p − c_i‖)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThinPlateSpline {
    pub controls: Vec<[f64; 2]>,
    /// Radial weights, one `[wx, wy]` per control point.
    pub weights: Vec<[f64; 2]>,
    /// Rows `[1, x, y]` coefficients for each output coordinate.
    pub affine: [[f64; 2]; 3],
    pub lambda: f64,
}

fn check_controls(points: &[[f64; 2]], lambda: f64) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::DegenerateControlPoints(format!("{} control points, need at least 3", points.len())));
    }
    if lambda == 0.0 {
        for (i, a) in points.iter().enumerate() {
            if let Some(k) = points[i + 1..].iter().position(|b| (a[0] - b[0]).hypot(a[1] - b[1]) < 1e-12) {
                return Err(Error::DegenerateControlPoints(format!("points {i} and {} coincide", i + 1 + k)));
            }
        }
    }
    let extent = points.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let p0 = points[0];
    let max_area = points
        .iter()
        .flat_map(|a| points.iter().map(move |b| ((a[0] - p0[0]) * (b[1] - p0[1]) - (a[1] - p0[1]) * (b[0] - p0[0])).abs()))
        .fold(0.0, f64::max);
    if max_area <= 1e-12 * extent * extent {
        return Err(Error::DegenerateControlPoints("all control points are collinear".into()));
    }
    Ok(())
}

impl ThinPlateSpline {
    /// Solves the bordered system `[K + λI, P; Pᵀ, 0]·[w; a] = [target; 0]`.
    pub fn fit(source: &[[f64; 2]], target: &[[f64; 2]], lambda: f64) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::ShapeMismatch { op: "tps_fit", lhs: vec![source.len(), 2], rhs: vec![target.len(), 2] });
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("tps lambda must be nonnegative, got {lambda}")));
        }
        check_controls(source, lambda)?;
        let (a, rhs) = Self::system(source, target, lambda);
        let solution = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateControlPoints("singular spline system".into()))?;
        let n = source.len();
        let weights = (0..n).map(|i| [solution[(i, 0)], solution[(i, 1)]]).collect();
        let affine = [
            [solution[(n, 0)], solution[(n, 1)]],
            [solution[(n + 1, 0)], solution[(n + 1, 1)]],
            [solution[(n + 2, 0)], solution[(n + 2, 1)]],
        ];
        Ok(Self { controls: source.to_vec(), weights, affine, lambda })
    }

    /// System matrix and right-hand side of [`fit`](Self::fit).
    pub fn system(source: &[[f64; 2]], target: &[[f64; 2]], lambda: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = source.len();
        let mut a = DMatrix::zeros(n + 3, n + 3);
        for i in 0..n {
            for j in 0..n {
                let (dx, dy) = (source[i][0] - source[j][0], source[i][1] - source[j][1]);
                a[(i, j)] = kernel(dx * dx + dy * dy);
            }
            a[(i, i)] += lambda;
            let row = [1.0, source[i][0], source[i][1]];
            for (k, v) in row.into_iter().enumerate() {
                a[(i, n + k)] = v;
                a[(n + k, i)] = v;
            }
        }
        let mut rhs = DMatrix::zeros(n + 3, 2);
        for (i, t) in target.iter().enumerate() {
            rhs[(i, 0)] = t[0];
            rhs[(i, 1)] = t[1];
        }
        (a, rhs)
    }

    /// Stacked `[w; a]` coefficients, matching [`system`](Self::system).
    pub fn coefficients(&self) -> DMatrix<f64> {
        let n = self.controls.len();
        DMatrix::from_fn(n + 3, 2, |r, c| if r < n { self.weights[r][c] } else { self.affine[r - n][c] })
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let a = &self.affine;
        let mut out = [a[0][0] + a[1][0] * p[0] + a[2][0] * p[1], a[0][1] + a[1][1] * p[0] + a[2][1] * p[1]];
        for (c, w) in self.controls.iter().zip(&self.weights) {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            let u = kernel(dx * dx + dy * dy);
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    pub fn apply_shape(&self, s: &Shape<f64>) -> Shape<f64> {
        Shape::new(s.points().iter().map(|&p| self.apply(p)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult {
    pub image: Image,
    /// The input expert shapes mapped by the forward spline, in order.
    pub shapes: Vec<Shape<f64>>,
    pub forward: ThinPlateSpline,
}

/// Every `stride`-th point of a shape.
pub fn control_points(s: &Shape<f64>, stride: usize) -> Vec<[f64; 2]> {
    s.points().iter().step_by(stride.max(1)).copied().collect()
}

/// Warps `image` so the `source` contour lands on `target`.
///
/// Shapes are forward-mapped by the spline fitted on control points
/// `source → target`; the image is resampled by the inverse spline
/// `target → source` with bilinear interpolation. Coordinates are normalized
/// to `[0, 1]²`, with pixel `(x, y)` centered at `((x + ½)/W, (y + ½)/H)`.
pub fn tps_warp(
    image: &Image,
    source: &Shape<f64>,
    target: &Shape<f64>,
    shapes: &[Shape<f64>],
    lambda: f64,
    stride: usize,
) -> Result<WarpResult> {
    source.check_same_len(target, "tps_warp")?;
    let (src, dst) = (control_points(source, stride), control_points(target, stride));
    let forward = ThinPlateSpline::fit(&src, &dst, lambda)?;
    let inverse = ThinPlateSpline::fit(&dst, &src, lambda)?;
    let (h, w) = (image.height, image.width);
    let mut out = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = [(x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64];
            let q = inverse.apply(p);
            out.pixels[y * w + x] = image.bilinear(q[0] * w as f64 - 0.5, q[1] * h as f64 - 0.5) as f32;
        }
    }
    let shapes = shapes.iter().map(|s| forward.apply_shape(s)).collect();
    Ok(WarpResult { image: out, shapes, forward })
}
