//! Run configuration: every hyperparameter of data generation, training and
//! evaluation, stored as a flat `key = value` TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SceneParams;
use crate::error::{Error, Result};
use crate::params::AdamConfig;
use crate::quantize::TemperatureSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Latent rows.
    pub m: usize,
    /// Quantized coordinates per latent row.
    pub n: usize,
    /// Points per shape.
    pub j: usize,
    pub height: usize,
    pub width: usize,
    /// Range spanned by the coordinate vector `c`.
    pub c_range: [f64; 2],
    /// Weight of the shape auto-encoding term.
    pub alpha: f64,
    /// Weight of the deterministic best-shape term.
    pub beta: f64,
    /// Entropy weight of the image auto-encoder variant.
    pub alpha_cqae: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    /// Annealing length in optimizer steps; 0 anneals over the whole run.
    pub tau_steps: usize,
    /// Ground-truth samples matched per image during training.
    pub k_max: usize,
    /// Model samples drawn per image during training.
    pub l_max: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub straight_through: bool,
    pub encoder_channels: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub shape_encoder_hidden: Vec<usize>,
    /// Shapes are multiplied by this factor (pixels per normalized unit)
    /// before the unit-variance Gaussian log-likelihoods.
    pub likelihood_scale: f64,
    /// Model and ground-truth samples per image at evaluation.
    pub eval_samples: usize,
    /// Scenes generated before augmentation.
    pub scenes: usize,
    pub train_fraction: f64,
    /// Training records after augmentation; 0 disables augmentation.
    pub augment_to: usize,
    pub ambiguity_levels: Vec<f64>,
    /// Expert displacement per unit ambiguity, in normalized image units.
    pub noise_unit: f64,
    pub blur_base: f64,
    pub blur_per_ambiguity: f64,
    pub contrast: f64,
    pub contrast_decay: f64,
    pub pixel_noise: f64,
    pub ssm_variance: f64,
    pub tps_lambda: f64,
    pub tps_stride: usize,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let scene = SceneParams::default();
        Self {
            m: 16,
            n: 11,
            j: 176,
            height: 64,
            width: 64,
            c_range: [-2.0, 2.0],
            alpha: 1.0,
            beta: 1.0,
            alpha_cqae: 1.0,
            tau_start: 1.0,
            tau_end: 0.3,
            tau_steps: 0,
            k_max: 8,
            l_max: 12,
            lr: 3e-4,
            batch: 4,
            epochs: 40,
            seed: 0,
            straight_through: true,
            encoder_channels: vec![16, 32, 64, 128],
            decoder_hidden: vec![128, 256],
            shape_encoder_hidden: vec![256, 128],
            likelihood_scale: 8.0,
            eval_samples: 100,
            scenes: 300,
            train_fraction: 0.8,
            augment_to: 0,
            ambiguity_levels: scene.ambiguity_levels,
            noise_unit: scene.noise_unit,
            blur_base: scene.blur_base,
            blur_per_ambiguity: scene.blur_per_ambiguity,
            contrast: scene.contrast,
            contrast_decay: scene.contrast_decay,
            pixel_noise: scene.pixel_noise,
            ssm_variance: 0.8,
            tps_lambda: 0.0,
            tps_stride: 8,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.k_max < 1 || self.l_max < self.k_max {
            return fail(format!("need l_max ≥ k_max ≥ 1, got k_max={}, l_max={}", self.k_max, self.l_max));
        }
        if self.n < 2 || self.m < 1 || self.j < 1 {
            return fail(format!("need m ≥ 1, n ≥ 2, j ≥ 1, got m={}, n={}, j={}", self.m, self.n, self.j));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return fail("temperatures must be positive".into());
        }
        if !(self.c_range[0] < self.c_range[1]) {
            return fail(format!("empty coordinate range {:?}", self.c_range));
        }
        if [self.alpha, self.beta, self.alpha_cqae].iter().any(|w| !(*w >= 0.0)) {
            return fail("loss weights must be nonnegative".into());
        }
        if self.batch == 0 || self.height < 2 || self.width < 2 || !(self.lr > 0.0) {
            return fail("batch, image size and lr must be positive".into());
        }
        if self.encoder_channels.is_empty() || self.decoder_hidden.is_empty() || self.shape_encoder_hidden.is_empty() {
            return fail("network widths must not be empty".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) || !(self.ssm_variance > 0.0 && self.ssm_variance <= 1.0) {
            return fail("fractions must lie in (0, 1]".into());
        }
        if self.tps_stride == 0 || self.tps_lambda < 0.0 || self.eval_samples == 0 || self.likelihood_scale <= 0.0 {
            return fail("tps_stride, eval_samples, likelihood_scale must be positive; tps_lambda ≥ 0".into());
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(Error::io(path))
    }

    /// Apply `key=value` overrides; values use TOML syntax, bare words are
    /// taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let config: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Scene generator settings at this configuration's image and shape size.
    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            j: self.j,
            height: self.height,
            width: self.width,
            ambiguity_levels: self.ambiguity_levels.clone(),
            noise_unit: self.noise_unit,
            blur_base: self.blur_base,
            blur_per_ambiguity: self.blur_per_ambiguity,
            contrast: self.contrast,
            contrast_decay: self.contrast_decay,
            pixel_noise: self.pixel_noise,
            ..SceneParams::default()
        }
    }

    pub fn tau_schedule(&self, total_steps: usize) -> TemperatureSchedule {
        TemperatureSchedule {
            start: self.tau_start,
            end: self.tau_end,
            steps: if self.tau_steps == 0 { total_steps } else { self.tau_steps },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = TrainConfig::default();
        c.alpha = 0.1;
        c.out_dir = Some("runs/a".into());
        let parsed = TrainConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(TrainConfig::from_toml_str(&parsed.to_toml_string()).unwrap(), parsed);
    }

    #[test]
    fn overrides_win_and_are_validated() {
        let c = TrainConfig::default().with_overrides(&["m=4", "seed = 9", "out_dir=runs/x", "c_range=[-1.0, 1.0]"]).unwrap();
        assert_eq!((c.m, c.seed), (4, 9));
        assert_eq!(c.out_dir, Some(PathBuf::from("runs/x")));
        assert_eq!(c.c_range, [-1.0, 1.0]);
        assert!(TrainConfig::default().with_overrides(&["k_max=20"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["bogus=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["n=1"]).is_err());
    }

    #[test]
    fn partial_files_use_defaults() {
        let c = TrainConfig::from_toml_str("m = 4\nn = 5\n").unwrap();
        assert_eq!((c.m, c.n, c.l_max), (4, 5, 12));
    }
}
