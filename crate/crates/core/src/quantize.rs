//! The coordinate-quantized latent space.
//!
//! A latent code is an `M×N` matrix whose rows are distributions over `N`
//! fixed coordinates. Multiplying by the coordinate vector `c` maps a code
//! (one-hot or soft) to a point of the continuous `M`-dimensional latent
//! space; one-hot codes land on the `N^M` grid points.

use num_bigint::BigUint;
use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Guard inside `log(π + ε)` for zero probabilities.
pub const LOG_EPS: f64 = 1e-20;

/// Row-sum tolerance of [`ProbabilityMatrix`], widened for `f32` rounding.
fn row_tolerance<T: Scalar>(cols: usize) -> f64 {
    1e-6_f64.max(4.0 * cols as f64 * T::epsilon().as_f64())
}

/// Strictly increasing quantized coordinates shared by every latent axis.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> CoordinateVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("coordinate vector must not be empty"));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("coordinates must be strictly increasing"));
        }
        Ok(Self { values })
    }

    /// `n` evenly spaced coordinates spanning `[lo, hi]`.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n == 0 || !(lo < hi) && n > 1 {
            return Err(Error::invalid(format!("bad coordinate grid: n={n}, range=[{lo}, {hi}]")));
        }
        if n == 1 {
            return Self::new(vec![T::of(0.5 * (lo + hi))]);
        }
        let step = (hi - lo) / (n - 1) as f64;
        Self::new((0..n).map(|i| T::of(lo + step * i as f64)).collect())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Column tensor `[N, 1]` for graph-side products.
    pub fn column(&self) -> Tensor<T> {
        Tensor::new(vec![self.values.len(), 1], self.values.clone()).expect("consistent")
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::of(self.values.len() as f64)
    }
}

/// `M×N` matrix with rows on the probability simplex: `q(z|x)` and friends.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> ProbabilityMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "probability_matrix",
                lhs: vec![rows, cols],
                rhs: vec![values.len()],
            });
        }
        let tol = row_tolerance::<T>(cols);
        for (m, row) in values.chunks(cols).enumerate() {
            if let Some(v) = row.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
                return Err(Error::NotProbability(format!("row {m} has entry {v}")));
            }
            let total = row.iter().copied().sum::<T>().as_f64();
            if (total - 1.0).abs() > tol {
                return Err(Error::NotProbability(format!("row {m} sums to {total}")));
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let p = T::one() / T::of(cols as f64);
        Self { rows, cols, values: vec![p; rows * cols] }
    }

    /// Row-wise softmax of a logit matrix.
    pub fn from_logits(rows: usize, cols: usize, logits: &[T]) -> Result<Self> {
        let mut values = logits.to_vec();
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_logits",
                lhs: vec![rows, cols],
                rhs: vec![values.len()],
            });
        }
        for row in values.chunks_mut(cols) {
            crate::autodiff::softmax_rows(row);
        }
        Self::new(rows, cols, values)
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match *t.shape() {
            [rows, cols] => Self::new(rows, cols, t.data().to_vec()),
            _ => Err(Error::invalid(format!("expected an M×N tensor, got {:?}", t.shape()))),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[T] {
        &self.values[m * self.cols..(m + 1) * self.cols]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.rows, self.cols], self.values.clone()).expect("consistent")
    }

    /// Natural-log entropy summed over every row.
    pub fn entropy(&self) -> T {
        entropy(&self.values).expect("validated entries are nonnegative")
    }

    /// `Σ_rows D_KL(row ‖ uniform) = M·ln N − H`.
    pub fn kl_to_uniform(&self) -> T {
        T::of(self.rows as f64 * (self.cols as f64).ln()) - self.entropy()
    }

    /// Mean over rows of the largest entry; 1 exactly when every row is one-hot.
    pub fn mean_row_max(&self) -> T {
        let total: T = self.values.chunks(self.cols).map(|r| r.iter().copied().fold(T::zero(), T::max)).sum();
        total / T::of(self.rows as f64)
    }
}

/// `M×N` one-hot matrix, stored as the hot column of each row.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatentCode {
    cols: usize,
    indices: Vec<usize>,
}

impl LatentCode {
    pub fn from_indices(cols: usize, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::invalid(format!("code index {bad} out of range for N={cols}")));
        }
        Ok(Self { cols, indices })
    }

    /// Parse a dense binary matrix, rejecting rows that are not one-hot.
    pub fn from_matrix<T: Scalar>(rows: usize, cols: usize, values: &[T]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch { op: "latent_code", lhs: vec![rows, cols], rhs: vec![values.len()] });
        }
        let mut indices = Vec::with_capacity(rows);
        for (m, row) in values.chunks(cols).enumerate() {
            let ones: Vec<usize> = (0..cols).filter(|&n| row[n] == T::one()).collect();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones.len() != 1 || zeros != cols - 1 {
                return Err(Error::invalid(format!("row {m} is not one-hot")));
            }
            indices.push(ones[0]);
        }
        Ok(Self { cols, indices })
    }

    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        Self { cols, indices: (0..rows).map(|_| rng.random_range(0..cols)).collect() }
    }

    pub fn rows(&self) -> usize {
        self.indices.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn to_matrix<T: Scalar>(&self) -> ProbabilityMatrix<T> {
        let mut values = vec![T::zero(); self.rows() * self.cols];
        for (m, &n) in self.indices.iter().enumerate() {
            values[m * self.cols + n] = T::one();
        }
        ProbabilityMatrix { rows: self.rows(), cols: self.cols, values }
    }

    pub fn to_latent<T: Scalar>(&self, c: &CoordinateVector<T>) -> Result<LatentVector<T>> {
        if c.len() != self.cols {
            return Err(Error::ShapeMismatch { op: "coordinate_map", lhs: vec![self.rows(), self.cols], rhs: vec![c.len()] });
        }
        Ok(LatentVector(self.indices.iter().map(|&n| c.values()[n]).collect()))
    }
}

/// A point `z′ ∈ R^M` of the continuous latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector<T>(pub Vec<T>);

/// `z′ = z × c`: expected coordinate of every row.
pub fn coordinate_map<T: Scalar>(z: &ProbabilityMatrix<T>, c: &CoordinateVector<T>) -> Result<LatentVector<T>> {
    if z.cols != c.len() {
        return Err(Error::ShapeMismatch { op: "coordinate_map", lhs: vec![z.rows, z.cols], rhs: vec![c.len()] });
    }
    Ok(LatentVector(
        z.values.chunks(z.cols).map(|row| row.iter().zip(c.values()).map(|(&p, &v)| p * v).sum()).collect(),
    ))
}

/// Graph form of [`coordinate_map`]: `z: [R, N]` to `[R, 1]`.
pub fn coordinate_map_var<T: Scalar>(g: &mut Graph<T>, z: Var, c: &CoordinateVector<T>) -> Result<Var> {
    let col = g.constant(c.column());
    g.matmul(z, col)
}

/// Number of distinct grid points, `N^M`.
pub fn count_codes(m: u32, n: u32) -> BigUint {
    BigUint::from(n).pow(m)
}

/// `−Σ p·ln p` with `0·ln 0 = 0`.
pub fn entropy<T: Scalar>(values: &[T]) -> Result<T> {
    let mut h = T::zero();
    for &p in values {
        if p < T::zero() || p.is_nan() {
            return Err(Error::NotProbability(format!("negative entry {p}")));
        }
        if p > T::zero() {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Row-wise hard sample at the row argmax, ties to the lowest column.
pub fn harden<T: Scalar>(sample: &ProbabilityMatrix<T>) -> LatentCode {
    LatentCode { cols: sample.cols, indices: sample.values.chunks(sample.cols).map(argmax).collect() }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// I.i.d. Gumbel(0, 1) noise for an `R×N` block of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelNoise<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> GumbelNoise<T> {
    pub fn sample(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid parameters");
        Self { rows, cols, values: (0..rows * cols).map(|_| T::of(gumbel.sample(rng))).collect() }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.rows, self.cols], self.values.clone()).expect("consistent")
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Relaxed sample `softmax((g + log(π + ε)) / τ)` with the given noise.
pub fn gumbel_softmax_with_noise<T: Scalar>(
    pi: &ProbabilityMatrix<T>,
    tau: f64,
    noise: &GumbelNoise<T>,
) -> Result<ProbabilityMatrix<T>> {
    check_tau(tau)?;
    if noise.rows != pi.rows || noise.cols != pi.cols {
        return Err(Error::ShapeMismatch {
            op: "gumbel_softmax",
            lhs: vec![pi.rows, pi.cols],
            rhs: vec![noise.rows, noise.cols],
        });
    }
    let inv_tau = T::of(1.0 / tau);
    let eps = T::of(LOG_EPS);
    let mut values: Vec<T> =
        pi.values.iter().zip(&noise.values).map(|(&p, &g)| (g + (p + eps).ln()) * inv_tau).collect();
    for row in values.chunks_mut(pi.cols) {
        crate::autodiff::softmax_rows(row);
    }
    Ok(ProbabilityMatrix { rows: pi.rows, cols: pi.cols, values })
}

pub fn gumbel_softmax_sample<T: Scalar>(
    pi: &ProbabilityMatrix<T>,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<ProbabilityMatrix<T>> {
    let noise = GumbelNoise::sample(pi.rows, pi.cols, rng);
    gumbel_softmax_with_noise(pi, tau, &noise)
}

/// Exact categorical sample per row: `one_hot(argmax(g + log π))`.
pub fn gumbel_max_sample<T: Scalar>(pi: &ProbabilityMatrix<T>, rng: &mut impl Rng) -> LatentCode {
    let noise = GumbelNoise::<T>::sample(pi.rows, pi.cols, rng);
    gumbel_max_with_noise(pi, &noise)
}

pub fn gumbel_max_with_noise<T: Scalar>(pi: &ProbabilityMatrix<T>, noise: &GumbelNoise<T>) -> LatentCode {
    let eps = T::of(LOG_EPS);
    let perturbed: Vec<T> = pi.values.iter().zip(&noise.values).map(|(&p, &g)| g + (p + eps).ln()).collect();
    LatentCode { cols: pi.cols, indices: perturbed.chunks(pi.cols).map(argmax).collect() }
}

/// Graph-side Gumbel-softmax for `S` samples of an `M×N` distribution.
///
/// `pi: [M, N]`, `noise: [S·M, N]`. Returns the `[S·M, N]` sample node and
/// the hardened codes, one per sample. With `straight_through` the forward
/// value is the one-hot code while gradients follow the relaxed softmax.
pub fn gumbel_softmax_var<T: Scalar>(
    g: &mut Graph<T>,
    pi: Var,
    noise: &GumbelNoise<T>,
    tau: f64,
    straight_through: bool,
) -> Result<(Var, Vec<LatentCode>)> {
    check_tau(tau)?;
    let (m, n) = match *g.shape(pi) {
        [m, n] => (m, n),
        _ => return Err(Error::invalid("gumbel_softmax_var expects an M×N matrix")),
    };
    if noise.cols != n || noise.rows % m != 0 || noise.rows == 0 {
        return Err(Error::ShapeMismatch { op: "gumbel_softmax", lhs: vec![m, n], rhs: vec![noise.rows, noise.cols] });
    }
    let samples = noise.rows / m;
    let shifted = g.add_scalar(pi, T::of(LOG_EPS));
    let log_pi = g.log(shifted);
    let tiled = if samples == 1 { log_pi } else { g.concat(&vec![log_pi; samples], 0)? };
    let gn = g.constant(noise.to_tensor());
    let perturbed = g.add(tiled, gn)?;
    let scaled = g.scale(perturbed, T::of(1.0 / tau));
    let soft = g.softmax(scaled);
    let codes: Vec<LatentCode> = g
        .value(soft)
        .data()
        .chunks(m * n)
        .map(|block| LatentCode { cols: n, indices: block.chunks(n).map(argmax).collect() })
        .collect();
    if !straight_through {
        return Ok((soft, codes));
    }
    let mut hard = vec![T::zero(); samples * m * n];
    for (s, code) in codes.iter().enumerate() {
        for (row, &col) in code.indices.iter().enumerate() {
            hard[(s * m + row) * n + col] = T::one();
        }
    }
    let hard = Tensor::new(vec![samples * m, n], hard)?;
    Ok((g.straight_through(soft, hard)?, codes))
}

/// Exponential temperature annealing from `start` to `end` over `steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.3, steps: 10_000 }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.end;
        }
        let t = (step as f64 / self.steps as f64).min(1.0);
        self.start * (self.end / self.start).powf(t)
    }
}
