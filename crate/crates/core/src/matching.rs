//! Ground-truth shape distributions from expert annotations and the global
//! greedy assignment that pairs them with model samples.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::shape::Shape;

/// Expert annotations of one image plus their consensus.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSet<T = f64> {
    experts: Vec<Shape<T>>,
    consensus: Shape<T>,
}

impl<T: Scalar> ExpertSet<T> {
    pub fn new(experts: Vec<Shape<T>>, consensus: Shape<T>) -> Result<Self> {
        for e in &experts {
            consensus.check_same_len(e, "expert_set")?;
        }
        Ok(Self { experts, consensus })
    }

    pub fn experts(&self) -> &[Shape<T>] {
        &self.experts
    }

    pub fn consensus(&self) -> &Shape<T> {
        &self.consensus
    }

    pub fn num_points(&self) -> usize {
        self.consensus.len()
    }

    pub fn cast<U: Scalar>(&self) -> ExpertSet<U> {
        ExpertSet { experts: self.experts.iter().map(Shape::cast).collect(), consensus: self.consensus.cast() }
    }
}

/// Uniform draw from the probability simplex of dimension `e`
/// (normalized unit exponentials, i.e. Dirichlet(1, …, 1)).
pub fn sample_simplex(e: usize, rng: &mut impl Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..e).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Pointwise `Σ wᵢ sᵢ`.
pub fn convex_combination<T: Scalar>(shapes: &[Shape<T>], weights: &[f64]) -> Result<Shape<T>> {
    let first = shapes.first().ok_or_else(|| Error::invalid("no shapes to combine"))?;
    if weights.len() != shapes.len() {
        return Err(Error::invalid(format!("{} weights for {} shapes", weights.len(), shapes.len())));
    }
    let mut points = vec![[T::zero(); 2]; first.len()];
    for (s, &w) in shapes.iter().zip(weights) {
        first.check_same_len(s, "convex_combination")?;
        let w = T::of(w);
        for (acc, p) in points.iter_mut().zip(s.points()) {
            acc[0] += w * p[0];
            acc[1] += w * p[1];
        }
    }
    Ok(Shape::new(points))
}

/// `k_max` shapes drawn from the convex hull of the expert annotations.
pub fn sample_gt_shapes<T: Scalar>(experts: &ExpertSet<T>, k_max: usize, rng: &mut impl Rng) -> Result<Vec<Shape<T>>> {
    if experts.experts.is_empty() {
        return Err(Error::invalid("expert set is empty"));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    (0..k_max)
        .map(|_| convex_combination(&experts.experts, &sample_simplex(experts.experts.len(), rng)))
        .collect()
}

/// Euclidean norm of the flattened `2J` difference.
pub fn shape_distance<T: Scalar>(a: &Shape<T>, b: &Shape<T>) -> Result<T> {
    a.check_same_len(b, "shape_distance")?;
    let sq: T = a
        .points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]))
        .sum();
    Ok(sq.sqrt())
}

/// Row-major `k × l` matrix: rows are ground-truth samples, columns model samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch { op: "distance_matrix", lhs: vec![rows, cols], rhs: vec![values.len()] });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn between<T: Scalar>(gt: &[Shape<T>], model: &[Shape<T>]) -> Result<Self> {
        let mut values = Vec::with_capacity(gt.len() * model.len());
        for g in gt {
            for m in model {
                values.push(shape_distance(g, m)?.as_f64());
            }
        }
        Self::new(gt.len(), model.len(), values)
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.cols + l]
    }
}

/// Injective assignment of every ground-truth index `k` to a model index `l(k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub assignment: Vec<usize>,
    pub distances: Vec<f64>,
}

impl MatchResult {
    pub fn total_cost(&self) -> f64 {
        self.distances.iter().sum()
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = self.assignment.clone();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

/// Global greedy assignment between model samples and ground-truth samples.
pub fn greedy_match<T: Scalar>(model_shapes: &[Shape<T>], gt_shapes: &[Shape<T>]) -> Result<MatchResult> {
    greedy_match_matrix(&DistanceMatrix::between(gt_shapes, model_shapes)?)
}

/// Repeatedly fixes the globally cheapest pair whose ground-truth and model
/// indices are both still free. Ties go to the smaller `k`, then smaller `l`.
pub fn greedy_match_matrix(d: &DistanceMatrix) -> Result<MatchResult> {
    if d.rows == 0 {
        return Err(Error::invalid("no ground-truth samples to match"));
    }
    if d.cols < d.rows {
        return Err(Error::invalid(format!("l_max ({}) must be at least k_max ({})", d.cols, d.rows)));
    }
    let mut order: Vec<usize> = (0..d.values.len()).collect();
    // Stable sort keeps row-major (k, then l) order among equal distances.
    order.sort_by(|&a, &b| d.values[a].total_cmp(&d.values[b]));
    let mut assignment = vec![usize::MAX; d.rows];
    let mut model_used = vec![false; d.cols];
    let mut left = d.rows;
    for idx in order {
        let (k, l) = (idx / d.cols, idx % d.cols);
        if assignment[k] != usize::MAX || model_used[l] {
            continue;
        }
        assignment[k] = l;
        model_used[l] = true;
        left -= 1;
        if left == 0 {
            break;
        }
    }
    let distances = assignment.iter().enumerate().map(|(k, &l)| d.get(k, l)).collect();
    Ok(MatchResult { assignment, distances })
}

/// Largest side accepted by [`optimal_match_oracle`].
pub const ORACLE_MAX: usize = 8;

/// Minimum-cost injective assignment by exhaustive search (`k ≤ l ≤ 8`).
pub fn optimal_match_oracle(d: &DistanceMatrix) -> Result<MatchResult> {
    if d.rows == 0 || d.rows > d.cols || d.cols > ORACLE_MAX {
        return Err(Error::invalid(format!(
            "oracle needs 1 ≤ k ≤ l ≤ {ORACLE_MAX}, got k={}, l={}",
            d.rows, d.cols
        )));
    }
    struct Search<'a> {
        d: &'a DistanceMatrix,
        current: Vec<usize>,
        used: Vec<bool>,
        best: Vec<usize>,
        best_cost: f64,
    }
    fn descend(s: &mut Search<'_>, k: usize, cost: f64) {
        if k == s.d.rows {
            if cost < s.best_cost {
                s.best_cost = cost;
                s.best.clone_from(&s.current);
            }
            return;
        }
        for l in 0..s.d.cols {
            if !s.used[l] {
                s.used[l] = true;
                s.current.push(l);
                descend(s, k + 1, cost + s.d.get(k, l));
                s.current.pop();
                s.used[l] = false;
            }
        }
    }
    let mut s = Search { d, current: Vec::new(), used: vec![false; d.cols], best: Vec::new(), best_cost: f64::INFINITY };
    descend(&mut s, 0, 0.0);
    let distances = s.best.iter().enumerate().map(|(k, &l)| d.get(k, l)).collect();
    Ok(MatchResult { assignment: s.best, distances })
}
