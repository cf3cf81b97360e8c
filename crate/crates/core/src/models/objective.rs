//! Training objectives.
//!
//! Every log-likelihood uses a unit-variance Gaussian with the constant
//! dropped, so `log p(a|b) = −‖a − b‖²` (after optional scaling). The shape
//! decoder is deterministic, so the reconstruction expectation inside the
//! VAE utility only contributes when explicit target pairs are supplied.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::quantize::{LatentCode, ProbabilityMatrix, LOG_EPS};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_cqae: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, alpha_cqae: f64) -> Result<Self> {
        if [alpha, beta, alpha_cqae].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        Ok(Self { alpha, beta, alpha_cqae })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, alpha_cqae: 1.0 }
    }
}

/// Utilities (to be maximized) and the minimized total of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `Σ_rows D_KL(q(z|x) ‖ uniform)`.
    pub kl: f64,
    /// VAE utility: expected log-likelihood minus `kl`.
    pub vae: f64,
    /// Expected `log q(z|s)` of the shape encoder.
    pub ae: f64,
    /// Matched-sample regression utility.
    pub reg: f64,
    /// Deterministic-path utility.
    pub best: f64,
    /// `−(vae + α·ae + reg + β·best)`.
    pub total: f64,
}

impl LossTerms {
    pub fn check_finite(&self) -> Result<()> {
        let named = [("kl", self.kl), ("vae", self.vae), ("ae", self.ae), ("reg", self.reg), ("best", self.best), ("total", self.total)];
        match named.iter().find(|(_, v)| !v.is_finite()) {
            Some((term, _)) => Err(Error::NonFinite { term }),
            None => Ok(()),
        }
    }

    pub(crate) fn accumulate(&mut self, other: &LossTerms) {
        self.kl += other.kl;
        self.vae += other.vae;
        self.ae += other.ae;
        self.reg += other.reg;
        self.best += other.best;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, k: f64) -> LossTerms {
        LossTerms {
            kl: self.kl * k,
            vae: self.vae * k,
            ae: self.ae * k,
            reg: self.reg * k,
            best: self.best * k,
            total: self.total * k,
        }
    }
}

/// `Σ π·(log π + ln N)` over an `[M, N]` probability node and its log.
pub fn kl_to_uniform_var<T: Scalar>(g: &mut Graph<T>, pi: Var, log_pi: Var) -> Result<Var> {
    let n = g.shape(pi)[g.shape(pi).len() - 1];
    let shifted = g.add_scalar(log_pi, T::of((n as f64).ln()));
    let prod = g.mul(pi, shifted)?;
    Ok(g.sum(prod))
}

/// `−Σ z·log(z + ε)`.
pub fn entropy_var<T: Scalar>(g: &mut Graph<T>, z: Var) -> Result<Var> {
    let shifted = g.add_scalar(z, T::of(LOG_EPS));
    let log = g.log(shifted);
    let prod = g.mul(z, log)?;
    let s = g.sum(prod);
    Ok(g.scale(s, -T::one()))
}

/// `−scale²·‖a − b‖²`.
pub fn gaussian_log_likelihood_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, scale: f64) -> Result<Var> {
    let sq = g.squared_distance(a, b)?;
    Ok(g.scale(sq, T::of(-scale * scale)))
}

/// `Σ log q[row, code[row]]` over every row of every code; `log_probs: [S·M, N]`.
pub fn categorical_log_likelihood_var<T: Scalar>(g: &mut Graph<T>, log_probs: Var, codes: &[LatentCode]) -> Result<Var> {
    let (rows, cols) = match *g.shape(log_probs) {
        [r, c] => (r, c),
        _ => return Err(Error::invalid("log_probs must be a matrix")),
    };
    let total_rows: usize = codes.iter().map(LatentCode::rows).sum();
    if total_rows != rows || codes.iter().any(|c| c.cols() != cols) {
        return Err(Error::ShapeMismatch { op: "categorical_log_likelihood", lhs: vec![rows, cols], rhs: vec![total_rows, codes.first().map_or(0, LatentCode::cols)] });
    }
    let mut mask = vec![T::zero(); rows * cols];
    for (r, &n) in codes.iter().flat_map(|c| c.indices()).enumerate() {
        mask[r * cols + n] = T::one();
    }
    let mask = g.constant(Tensor::new(vec![rows, cols], mask)?);
    let picked = g.mul(log_probs, mask)?;
    Ok(g.sum(picked))
}

/// Graph nodes of the four utilities.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub kl: Var,
    pub vae: Var,
    pub ae: Var,
    pub reg: Var,
    pub best: Var,
}

impl ObjectiveVars {
    /// Minimized loss `−(U_vae + α·U_ae + U_reg + β·U_best)`.
    pub fn total<T: Scalar>(&self, g: &mut Graph<T>, weights: &LossWeights) -> Result<Var> {
        let ae = g.scale(self.ae, T::of(weights.alpha));
        let best = g.scale(self.best, T::of(weights.beta));
        let u = g.add(self.vae, ae)?;
        let u = g.add(u, self.reg)?;
        let u = g.add(u, best)?;
        Ok(g.scale(u, -T::one()))
    }

    pub fn terms<T: Scalar>(&self, g: &Graph<T>, total: Var) -> LossTerms {
        let v = |x: Var| g.value(x).item().as_f64();
        LossTerms { kl: v(self.kl), vae: v(self.vae), ae: v(self.ae), reg: v(self.reg), best: v(self.best), total: v(total) }
    }
}

fn flat_const<T: Scalar>(g: &mut Graph<T>, shapes: &[&Shape<T>]) -> Result<Var> {
    let width = shapes.first().map_or(0, |s| 2 * s.len());
    let mut data = Vec::with_capacity(shapes.len() * width);
    for s in shapes {
        if 2 * s.len() != width {
            return Err(Error::ShapeMismatch { op: "shape_batch", lhs: vec![width / 2, 2], rhs: vec![s.len(), 2] });
        }
        data.extend(s.to_flat());
    }
    Ok(g.constant(Tensor::new(vec![shapes.len(), width], data)?))
}

/// Sum of pairwise Gaussian log-likelihoods `−Σ‖a − b‖²`, or zero for no pairs.
fn pair_log_likelihood_var<T: Scalar>(g: &mut Graph<T>, pairs: &[(Shape<T>, Shape<T>)]) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let a: Vec<&Shape<T>> = pairs.iter().map(|p| &p.0).collect();
    let b: Vec<&Shape<T>> = pairs.iter().map(|p| &p.1).collect();
    let (a, b) = (flat_const(g, &a)?, flat_const(g, &b)?);
    gaussian_log_likelihood_var(g, a, b, 1.0)
}

/// `‖x̂ − x‖² + α·H(z)`.
pub fn cqae_loss<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>, z: &ProbabilityMatrix<T>, alpha: f64) -> Result<T> {
    if x.shape() != xhat.shape() {
        return Err(Error::ShapeMismatch { op: "cqae_loss", lhs: x.shape().to_vec(), rhs: xhat.shape().to_vec() });
    }
    let mut g = Graph::new();
    let (xv, xh, zv) = (g.constant(x.clone()), g.constant(xhat.clone()), g.constant(z.to_tensor()));
    let loss = cqae_loss_var(&mut g, xv, xh, zv, alpha)?;
    Ok(g.value(loss).item())
}

pub fn cqae_loss_var<T: Scalar>(g: &mut Graph<T>, x: Var, xhat: Var, z: Var, alpha: f64) -> Result<Var> {
    let rec = g.squared_distance(xhat, x)?;
    let h = entropy_var(g, z)?;
    let h = g.scale(h, T::of(alpha));
    g.add(rec, h)
}

/// `E[log p(s|z)] − D_KL(q(z|x) ‖ uniform)` with the expectation taken as
/// the mean over `(decoded, target)` pairs.
pub fn vae_term<T: Scalar>(q: &ProbabilityMatrix<T>, pairs: &[(Shape<T>, Shape<T>)]) -> Result<T> {
    let mut g = Graph::new();
    let v = vae_var(&mut g, q, pairs)?;
    Ok(g.value(v.0).item())
}

fn vae_var<T: Scalar>(g: &mut Graph<T>, q: &ProbabilityMatrix<T>, pairs: &[(Shape<T>, Shape<T>)]) -> Result<(Var, Var)> {
    let pi = g.constant(q.to_tensor());
    let shifted = g.add_scalar(pi, T::of(LOG_EPS));
    let log_pi = g.log(shifted);
    let kl = kl_to_uniform_var(g, pi, log_pi)?;
    let ll = pair_log_likelihood_var(g, pairs)?;
    let ll = g.scale(ll, T::of(1.0 / pairs.len().max(1) as f64));
    Ok((g.sub(ll, kl)?, kl))
}

/// `log q(z|s)`: negative cross-entropy of the shape encoder's distribution
/// against the hard code, summed over rows. Probabilities are shifted by ε
/// before the log, so exact zeros off the code stay finite.
pub fn ae_term<T: Scalar>(probs: &ProbabilityMatrix<T>, code: &LatentCode) -> Result<T> {
    let mut g = Graph::new();
    let v = ae_var(&mut g, &[(probs.clone(), code.clone())])?;
    Ok(g.value(v).item())
}

fn ae_var<T: Scalar>(g: &mut Graph<T>, pairs: &[(ProbabilityMatrix<T>, LatentCode)]) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let cols = pairs[0].0.cols();
    let mut data = Vec::new();
    for (p, code) in pairs {
        if p.rows() != code.rows() || p.cols() != code.cols() {
            return Err(Error::ShapeMismatch { op: "ae_term", lhs: vec![p.rows(), p.cols()], rhs: vec![code.rows(), code.cols()] });
        }
        data.extend_from_slice(p.values());
    }
    let rows = data.len() / cols;
    let probs = g.constant(Tensor::new(vec![rows, cols], data)?);
    let shifted = g.add_scalar(probs, T::of(LOG_EPS));
    let log = g.log(shifted);
    let codes: Vec<LatentCode> = pairs.iter().map(|p| p.1.clone()).collect();
    let ll = categorical_log_likelihood_var(g, log, &codes)?;
    Ok(g.scale(ll, T::of(1.0 / pairs.len() as f64)))
}

/// Inputs of [`total_objective`] for one image.
pub struct ObjectiveParts<'a, T> {
    /// `q(z|x)`.
    pub q: &'a ProbabilityMatrix<T>,
    /// `(decoded, target)` pairs for the VAE log-likelihood.
    pub likelihood_pairs: &'a [(Shape<T>, Shape<T>)],
    /// Shape-encoder distribution for each sampled code.
    pub ae_pairs: &'a [(ProbabilityMatrix<T>, LatentCode)],
    /// Matched `(model sample, ground-truth sample)` pairs.
    pub matched: &'a [(Shape<T>, Shape<T>)],
    pub best: &'a Shape<T>,
    pub consensus: &'a Shape<T>,
}

/// Four-term objective on plain values, unit likelihood scale.
pub fn total_objective<T: Scalar>(parts: &ObjectiveParts<'_, T>, weights: &LossWeights) -> Result<LossTerms> {
    let mut g = Graph::new();
    let (vae, kl) = vae_var(&mut g, parts.q, parts.likelihood_pairs)?;
    let ae = ae_var(&mut g, parts.ae_pairs)?;
    let reg = pair_log_likelihood_var(&mut g, parts.matched)?;
    let best = pair_log_likelihood_var(&mut g, &[(parts.best.clone(), parts.consensus.clone())])?;
    let vars = ObjectiveVars { kl, vae, ae, reg, best };
    let total = vars.total(&mut g, weights)?;
    let terms = vars.terms(&g, total);
    terms.check_finite()?;
    Ok(terms)
}
