use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bias, correlation_named, shape_variation, VariationReport};
use crate::data::Record;
use crate::error::{Error, Result};
use crate::matching::sample_gt_shapes;
use crate::models::CqVae;
use crate::rng::{Seeds, Stream};
use crate::scalar::Scalar;
use crate::shape::Shape;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    /// Model samples per image.
    pub l_max: usize,
    /// Ground-truth samples per image.
    pub k_max: usize,
    pub seed: u64,
    /// Heatmaps are produced for the first `heatmaps` records.
    pub heatmaps: usize,
}

/// Per-image uncertainty and accuracy measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub ambiguity: f64,
    pub var_gt: f64,
    pub var_model: f64,
    /// Entropy of `q(z|x)` in nats, summed over rows.
    pub entropy: f64,
    pub bias_best: f64,
}

/// A correlation, or the reason it could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: Option<f64>,
    pub degenerate: Option<String>,
}

impl Correlation {
    fn of(xs: &[f64], ys: &[f64], names: (&'static str, &'static str)) -> Self {
        match correlation_named(xs, ys, names) {
            Ok(r) => Self { value: Some(r), degenerate: None },
            Err(e) => Self { value: None, degenerate: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub var_model_vs_var_gt: Correlation,
    pub entropy_vs_var_gt: Correlation,
    pub bias_vs_var_model: Correlation,
    pub bias_vs_entropy: Correlation,
}

impl Correlations {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let col = |f: fn(&EvalRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let (var_gt, var_model) = (col(|r| r.var_gt), col(|r| r.var_model));
        let (entropy, bias) = (col(|r| r.entropy), col(|r| r.bias_best));
        Self {
            var_model_vs_var_gt: Correlation::of(&var_model, &var_gt, ("var_model", "var_gt")),
            entropy_vs_var_gt: Correlation::of(&entropy, &var_gt, ("entropy", "var_gt")),
            bias_vs_var_model: Correlation::of(&bias, &var_model, ("bias", "var_model")),
            bias_vs_entropy: Correlation::of(&bias, &entropy, ("bias", "entropy")),
        }
    }
}

/// Mean shape and per-point variation on both sides of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub id: String,
    pub gt: VariationReport<f64>,
    pub model: VariationReport<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub correlations: Correlations,
    pub heatmaps: Vec<Heatmap>,
    /// `(record id, error)` for images that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

struct ImageEval {
    record: EvalRecord,
    gt: VariationReport<f64>,
    model: VariationReport<f64>,
}

fn evaluate_one<T: Scalar>(model: &CqVae<T>, record: &Record, index: usize, settings: &EvalSettings) -> Result<ImageEval> {
    let seeds = Seeds::new(settings.seed);
    let pi = model.probabilities(&record.image)?;
    let samples: Vec<Shape<f64>> = model
        .sample_from(&pi, settings.l_max, &mut seeds.rng(Stream::Eval, &[index as u64]))?
        .iter()
        .map(Shape::cast)
        .collect();
    let gt = sample_gt_shapes(&record.experts, settings.k_max, &mut seeds.rng(Stream::GtSampling, &[index as u64]))?;
    let model_var = shape_variation(&samples)?;
    let gt_var = shape_variation(&gt)?;
    let best: Shape<f64> = model.best_shape(&record.image)?.cast();
    let record = EvalRecord {
        id: record.id.clone(),
        ambiguity: record.ambiguity,
        var_gt: gt_var.scalar_variation,
        var_model: model_var.scalar_variation,
        entropy: pi.entropy().as_f64(),
        bias_best: bias(&best, record.experts.consensus())?,
    };
    let values = [record.var_gt, record.var_model, record.entropy, record.bias_best];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { term: "evaluation" });
    }
    Ok(ImageEval { record, gt: gt_var, model: model_var })
}

/// Per-image statistics, the four summary correlations and heatmap data.
/// Images that fail are reported and skipped.
pub fn evaluate<T: Scalar>(model: &CqVae<T>, records: &[Record], settings: &EvalSettings) -> Result<EvalReport> {
    if settings.l_max == 0 || settings.k_max == 0 {
        return Err(Error::invalid("evaluation needs at least one model and one ground-truth sample"));
    }
    let results: Vec<Result<ImageEval>> =
        records.par_iter().enumerate().map(|(i, r)| evaluate_one(model, r, i, settings)).collect();
    let mut report = EvalReport {
        records: Vec::new(),
        correlations: Correlations::from_records(&[]),
        heatmaps: Vec::new(),
        failures: Vec::new(),
    };
    for (r, result) in records.iter().zip(results) {
        match result {
            Ok(e) => {
                if report.heatmaps.len() < settings.heatmaps {
                    report.heatmaps.push(Heatmap { id: e.record.id.clone(), gt: e.gt, model: e.model });
                }
                report.records.push(e.record);
            }
            Err(err) => report.failures.push((r.id.clone(), err.to_string())),
        }
    }
    report.correlations = Correlations::from_records(&report.records);
    Ok(report)
}
