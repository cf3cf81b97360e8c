//! Subcommands of the `cqvae` binary as library functions.
//!
//! Every command writes into one output directory together with the
//! effective configuration (`config.toml`) and the build version (`VERSION`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cqvae::data::{
    augment, fit_ssm, generate_dataset, read_dataset, read_image, write_dataset, write_shape_csv, AugmentSettings, Dataset,
    Image, Record, Split,
};
use cqvae::matching::sample_gt_shapes;
use cqvae::metrics::report::{overlay_on_image, overlay_raster, write_report};
use cqvae::metrics::{evaluate, shape_variation, EvalReport, EvalSettings};
use cqvae::models::checkpoint::{Checkpoint, ModelKind};
use cqvae::models::train::{load_cqvae, CqAeEpoch, CqAeTrainer, CqVaeTrainer, TrainLog};
use cqvae::quantize::{harden, LatentCode};
use cqvae::rng::{Seeds, Stream};
use cqvae::{Error, Result, Shape, TrainConfig};

pub const VERSION: &str = env!("CQVAE_VERSION");

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

/// Process exit code for a failed command: 1 usage, 2 data, 3 divergence.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Creates `dir` and echoes the configuration and version into it.
pub fn prepare_run_dir(dir: &Path, config: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    config.save(&dir.join("config.toml"))?;
    write_text(&dir.join("VERSION"), &format!("{VERSION}\n"))
}

/// Dataset geometry replaces the configured `j`, `height` and `width`.
fn with_geometry(config: &TrainConfig, ds: &Dataset) -> TrainConfig {
    TrainConfig { j: ds.j, height: ds.height, width: ds.width, ..config.clone() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmbiguityRow {
    pub ambiguity: f64,
    pub scenes: usize,
    pub mean_var_gt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub train: usize,
    pub test: usize,
    pub augmented: usize,
    pub sweep: Vec<AmbiguityRow>,
}

/// Mean ground-truth shape variation per ambiguity level.
pub fn ambiguity_table(records: &[Record], k: usize, seed: u64) -> Result<Vec<AmbiguityRow>> {
    let seeds = Seeds::new(seed);
    let mut groups: BTreeMap<u64, (f64, usize, f64)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let gt = sample_gt_shapes(&r.experts, k, &mut seeds.rng(Stream::GtSampling, &[i as u64]))?;
        let v = shape_variation(&gt)?.scalar_variation;
        let e = groups.entry(r.ambiguity.to_bits()).or_insert((r.ambiguity, 0, 0.0));
        e.1 += 1;
        e.2 += v;
    }
    let mut rows: Vec<AmbiguityRow> = groups
        .into_values()
        .map(|(ambiguity, scenes, total)| AmbiguityRow { ambiguity, scenes, mean_var_gt: total / scenes as f64 })
        .collect();
    rows.sort_by(|a, b| a.ambiguity.total_cmp(&b.ambiguity));
    Ok(rows)
}

pub fn cmd_generate(config: &TrainConfig, out: &Path, sweep: bool) -> Result<GenerateSummary> {
    let mut ds = generate_dataset(&config.scene_params(), config.scenes, config.train_fraction, config.seed)?;
    let train = ds.split_owned(Split::Train);
    let test = ds.split_owned(Split::Test);
    let mut augmented = 0;
    if config.augment_to > 0 {
        let consensus: Vec<Shape> = train.iter().map(|r| r.experts.consensus().clone()).collect();
        let ssm = fit_ssm(&consensus, config.ssm_variance)?;
        let settings = AugmentSettings {
            count: config.augment_to,
            lambda: config.tps_lambda,
            stride: config.tps_stride,
            seed: config.seed,
        };
        let grown = augment(&train, &ssm, &settings)?;
        augmented = grown.len() - train.len();
        ds.records = grown.into_iter().chain(test.iter().cloned()).collect();
    }
    write_dataset(out, &ds)?;
    prepare_run_dir(out, config)?;
    let summary = GenerateSummary {
        train: train.len() + augmented,
        test: test.len(),
        augmented,
        sweep: if sweep { ambiguity_table(&ds.records, config.eval_samples, config.seed)? } else { Vec::new() },
    };
    if sweep {
        let mut csv = String::from("ambiguity,scenes,mean_var_gt\n");
        for row in &summary.sweep {
            writeln!(csv, "{},{},{:.9}", row.ambiguity, row.scenes, row.mean_var_gt).expect("string write");
        }
        write_text(&out.join("ambiguity_sweep.csv"), &csv)?;
    }
    Ok(summary)
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    writeln!(f, "{line}").map_err(io_err(path))
}

/// Trains a CQ-VAE on the training split, validating on the test split.
///
/// `metrics.csv` gains one row per epoch and the checkpoint is rewritten
/// after every completed epoch, so on divergence the run directory still
/// holds the last good state.
pub fn cmd_train(
    config: &TrainConfig,
    data: &Path,
    run: &Path,
    resume: Option<&Path>,
    mut on_epoch: impl FnMut(&str),
) -> Result<TrainLog> {
    let ds = read_dataset(data)?;
    let config = with_geometry(config, &ds);
    let train = ds.split_owned(Split::Train);
    let val = ds.split_owned(Split::Test);
    if train.is_empty() {
        return Err(Error::Dataset(format!("{}: no training records", data.display())));
    }
    let mut trainer = match resume {
        Some(path) => {
            let mut t = CqVaeTrainer::<f32>::from_checkpoint(&Checkpoint::load(path)?)?;
            t.config.epochs = config.epochs;
            t
        }
        None => CqVaeTrainer::<f32>::new(&config, &train)?,
    };
    prepare_run_dir(run, &trainer.config)?;
    let metrics = run.join("metrics.csv");
    if resume.is_none() || !metrics.exists() {
        write_text(&metrics, &format!("{}\n", TrainLog::CSV_HEADER))?;
    }
    let ckpt = run.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&ckpt)?;
    let mut log = TrainLog::default();
    while trainer.epoch() < trainer.config.epochs {
        let m = trainer.train_epoch(&train, &val)?;
        let row = TrainLog::csv_row(&m);
        append_line(&metrics, &row)?;
        trainer.checkpoint().save(&ckpt)?;
        on_epoch(&row);
        log.epochs.push(m);
    }
    Ok(log)
}

/// Trains the image auto-encoder variant on the training images.
pub fn cmd_cqae(config: &TrainConfig, data: &Path, run: &Path, mut on_epoch: impl FnMut(&str)) -> Result<Vec<CqAeEpoch>> {
    let ds = read_dataset(data)?;
    let config = with_geometry(config, &ds);
    let images: Vec<Image> = ds.split_owned(Split::Train).into_iter().map(|r| r.image).collect();
    let mut trainer = CqAeTrainer::<f32>::new(&config)?;
    prepare_run_dir(run, &config)?;
    let metrics = run.join("metrics.csv");
    write_text(&metrics, &format!("{}\n", CqAeEpoch::CSV_HEADER))?;
    let ckpt = run.join(CHECKPOINT_FILE);
    let mut epochs = Vec::new();
    while trainer.epoch() < config.epochs {
        let e = trainer.train_epoch(&images)?;
        append_line(&metrics, &e.csv_row())?;
        trainer.checkpoint().save(&ckpt)?;
        on_epoch(&e.csv_row());
        epochs.push(e);
    }
    Ok(epochs)
}

/// What `cmd_sample` conditions on.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleSource {
    /// Uniformly random codes, no image.
    Random,
    /// A raw `f32` image file at the checkpoint's resolution.
    ImageFile(PathBuf),
    /// A record of a dataset directory.
    Record { data: PathBuf, id: String },
}

fn source_image(source: &SampleSource, config: &TrainConfig) -> Result<Option<Image>> {
    match source {
        SampleSource::Random => Ok(None),
        SampleSource::ImageFile(path) => read_image(path, config.height, config.width).map(Some),
        SampleSource::Record { data, id } => {
            let ds = read_dataset(data)?;
            let r = ds.records.into_iter().find(|r| &r.id == id);
            r.map(|r| Some(r.image)).ok_or_else(|| Error::Dataset(format!("no record `{id}` in {}", data.display())))
        }
    }
}

/// Draws `count` samples and writes them with an overlay raster.
///
/// CQ-VAE checkpoints produce `sample_NNN.csv` shapes (plus `best.csv` when
/// conditioned on an image); CQ-AE checkpoints produce `sample_NNN.png`
/// images.
pub fn cmd_sample(checkpoint: &Path, source: &SampleSource, count: usize, seed: u64, out: &Path) -> Result<usize> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let config = &ck.config;
    let image = source_image(source, config)?;
    prepare_run_dir(out, config)?;
    let mut rng = Seeds::new(seed).rng(Stream::Eval, &[u64::MAX]);
    match ck.state.kind {
        ModelKind::CqVae => {
            let model = load_cqvae::<f32>(&ck)?;
            let shapes: Vec<Shape> = match &image {
                None => {
                    let codes: Vec<LatentCode> = (0..count).map(|_| LatentCode::random(config.m, config.n, &mut rng)).collect();
                    model.decode_codes(&codes)?.iter().map(Shape::cast).collect()
                }
                Some(img) => model.sample_shapes(img, count, &mut rng)?.iter().map(Shape::cast).collect(),
            };
            for (i, s) in shapes.iter().enumerate() {
                write_shape_csv(&out.join(format!("sample_{i:03}.csv")), s)?;
            }
            let overlay = match &image {
                None => overlay_raster(&shapes, 256),
                Some(img) => {
                    let best: Shape = model.best_shape(img)?.cast();
                    write_shape_csv(&out.join("best.csv"), &best)?;
                    overlay_on_image(img, &shapes, 4)
                }
            };
            overlay.save(out.join("overlay.png"))?;
            Ok(shapes.len())
        }
        ModelKind::CqAe => {
            let trainer = CqAeTrainer::<f32>::from_checkpoint(&ck)?;
            let codes: Vec<LatentCode> = match &image {
                None => (0..count).map(|_| LatentCode::random(config.m, config.n, &mut rng)).collect(),
                Some(img) => vec![harden(&trainer.model.encode(img)?); count],
            };
            for (i, code) in codes.iter().enumerate() {
                let generated = trainer.model.generate(code)?;
                overlay_on_image(&generated, &[], 4).save(out.join(format!("sample_{i:03}.png")))?;
            }
            Ok(codes.len())
        }
    }
}

/// Evaluates a CQ-VAE checkpoint on the test split and writes the report.
pub fn cmd_evaluate(checkpoint: &Path, data: &Path, out: &Path, heatmaps: usize) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.state.kind != ModelKind::CqVae {
        return Err(Error::Checkpoint("evaluation needs a CQ-VAE checkpoint".into()));
    }
    let model = load_cqvae::<f32>(&ck)?;
    let test = read_dataset(data)?.split_owned(Split::Test);
    if test.is_empty() {
        return Err(Error::Dataset(format!("{}: no test records", data.display())));
    }
    let settings = EvalSettings {
        l_max: ck.config.eval_samples,
        k_max: ck.config.eval_samples,
        seed: ck.config.seed,
        heatmaps,
    };
    let report = evaluate(&model, &test, &settings)?;
    prepare_run_dir(out, &ck.config)?;
    write_report(out, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRow {
    pub id: String,
    pub var_gt: f64,
    pub mean_var_model: f64,
    /// Variance of `var_model` across seeds.
    pub cross_seed_variance: f64,
}

/// Trains and evaluates `seeds` models with consecutive seeds, reporting
/// per-image spread of the model uncertainty across them.
pub fn cmd_ensemble(
    config: &TrainConfig,
    data: &Path,
    out: &Path,
    seeds: usize,
    heatmaps: usize,
    mut on_epoch: impl FnMut(&str),
) -> Result<Vec<EnsembleRow>> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
    }
    prepare_run_dir(out, config)?;
    let mut reports = Vec::new();
    for i in 0..seeds {
        let cfg = TrainConfig { seed: config.seed + i as u64, ..config.clone() };
        let run = out.join(format!("seed{}", cfg.seed));
        cmd_train(&cfg, data, &run, None, &mut on_epoch)?;
        reports.push(cmd_evaluate(&run.join(CHECKPOINT_FILE), data, &run.join("eval"), heatmaps)?);
    }
    let mut rows = Vec::new();
    for rec in &reports[0].records {
        let values: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.records.iter().find(|x| x.id == rec.id).map(|x| x.var_model))
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        rows.push(EnsembleRow { id: rec.id.clone(), var_gt: rec.var_gt, mean_var_model: mean, cross_seed_variance: var });
    }
    let mut csv = String::from("id,var_gt,mean_var_model,cross_seed_variance\n");
    for r in &rows {
        writeln!(csv, "{},{:.9},{:.9},{:.9}", r.id, r.var_gt, r.mean_var_model, r.cross_seed_variance).expect("string write");
    }
    write_text(&out.join("ensemble.csv"), &csv)?;
    let mean_spread = rows.iter().map(|r| r.cross_seed_variance).sum::<f64>() / rows.len().max(1) as f64;
    let summary = serde_json::json!({ "seeds": seeds, "images": rows.len(), "mean_cross_seed_variance": mean_spread });
    write_text(&out.join("ensemble.json"), &format!("{}\n", serde_json::to_string_pretty(&summary)?))?;
    Ok(rows)
}
