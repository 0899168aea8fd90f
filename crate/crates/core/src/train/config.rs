use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::arch::ArchSpec;
use crate::dense::{plan_range, ScalePlan};
use crate::error::{Error, Result};

/// How the detector picks background windows from each image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NegativeMode {
    #[default]
    Random,
    /// Background windows the current model scores highest as some object class.
    Hardest,
}

impl FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(NegativeMode::Random),
            "hardest" => Ok(NegativeMode::Hardest),
            other => Err(Error::invalid(format!("unknown negative mode `{other}`"))),
        }
    }
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Random => "random",
            NegativeMode::Hardest => "hardest",
        })
    }
}

/// Every training hyperparameter. Defaults are the full-scale ImageNet settings;
/// [`TrainConfig::toy`] holds the desk-scale overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_decay_factor: f32,
    pub decay_epochs: Vec<usize>,
    pub dropout_rate: f32,
    pub batch: usize,
    /// Crop size; `None` means the architecture's training window.
    pub crop: Option<(usize, usize)>,
    pub crops_per_image: usize,
    pub resize_min_dim: usize,
    pub init_mean: f32,
    pub init_std: f32,
    /// When set, weights use fan-in scaled init with this gain instead of `init_std`.
    pub init_gain: Option<f32>,
    pub seed: u64,
    pub epochs: usize,
    /// Background windows per image for detector training.
    pub negatives_per_image: usize,
    pub negative_mode: NegativeMode,
    /// Regression heads: 1 shared, or one per class.
    pub heads: usize,
    /// Number of plan scales used for head training and inference.
    pub scales: usize,
    /// Index of the first plan scale in that range.
    pub first_scale: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-2,
            momentum: 0.6,
            weight_decay: 1e-5,
            lr_decay_factor: 0.5,
            decay_epochs: vec![30, 50, 60, 70, 80],
            dropout_rate: 0.5,
            batch: 128,
            crop: None,
            crops_per_image: 5,
            resize_min_dim: 256,
            init_mean: 0.0,
            init_std: 1e-2,
            init_gain: None,
            seed: 0,
            epochs: 90,
            negatives_per_image: 4,
            negative_mode: NegativeMode::Random,
            heads: 1,
            scales: 6,
            first_scale: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "lr0",
    "momentum",
    "weight_decay",
    "lr_decay_factor",
    "decay_epochs",
    "dropout_rate",
    "batch",
    "crop",
    "crops_per_image",
    "resize_min_dim",
    "init_mean",
    "init_std",
    "init_gain",
    "seed",
    "epochs",
    "negatives_per_image",
    "negative_mode",
    "heads",
    "scales",
    "first_scale",
];

impl TrainConfig {
    /// Desk-scale settings for the toy architecture on `image_size` synthetic images.
    pub fn toy(image_size: usize) -> Self {
        TrainConfig {
            lr0: 2e-2,
            momentum: 0.9,
            weight_decay: 1e-5,
            decay_epochs: vec![8, 12],
            dropout_rate: 0.0,
            batch: 16,
            crops_per_image: 1,
            resize_min_dim: image_size,
            init_gain: Some(2f32.sqrt()),
            epochs: 14,
            negatives_per_image: 4,
            scales: 2,
            ..TrainConfig::default()
        }
    }

    /// Desk-scale settings for regressor and detector fine-tuning on frozen toy features.
    pub fn toy_heads(image_size: usize) -> Self {
        TrainConfig {
            lr0: 2e-3,
            decay_epochs: vec![20],
            epochs: 30,
            ..TrainConfig::toy(image_size)
        }
    }

    /// Plan scales `first_scale .. first_scale + scales` of `spec`.
    pub fn head_plan(&self, spec: &ArchSpec) -> Result<ScalePlan> {
        plan_range(spec, self.first_scale, self.scales)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch == 0 || self.crops_per_image == 0 || self.resize_min_dim == 0 {
            return bad("batch, crops_per_image and resize_min_dim must be positive".into());
        }
        if self.heads == 0 || !(1..=6).contains(&self.scales) || self.first_scale + self.scales > 6 {
            return bad("heads must be positive, scales in 1..=6 and first_scale + scales at most 6".into());
        }
        if self.init_std.is_nan() || self.init_std <= 0.0 || self.init_gain.is_some_and(|g| g.is_nan() || g <= 0.0) {
            return bad("initialisation spread must be positive".into());
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn parse_overrides(mut self, text: &str, path: &Path) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            self.set(key, value).map_err(|e| err(e.to_string()))?;
            log::info!("config override: {key} = {value}");
        }
        self.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("`{key}` expects a number, got `{v}`")))
        }
        match key {
            "lr0" => self.lr0 = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "decay_epochs" => {
                self.decay_epochs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| num(key, s))
                    .collect::<Result<_>>()?
            }
            "dropout_rate" => self.dropout_rate = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "crop" => {
                self.crop = match value {
                    "auto" => None,
                    v => Some(match v.split_once('x') {
                        Some((h, w)) => (num(key, h)?, num(key, w)?),
                        None => {
                            let s = num(key, v)?;
                            (s, s)
                        }
                    }),
                }
            }
            "crops_per_image" => self.crops_per_image = num(key, value)?,
            "resize_min_dim" => self.resize_min_dim = num(key, value)?,
            "init_mean" => self.init_mean = num(key, value)?,
            "init_std" => self.init_std = num(key, value)?,
            "init_gain" => {
                self.init_gain = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "seed" => self.seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "negatives_per_image" => self.negatives_per_image = num(key, value)?,
            "negative_mode" => self.negative_mode = value.parse()?,
            "heads" => self.heads = num(key, value)?,
            "scales" => self.scales = num(key, value)?,
            "first_scale" => self.first_scale = num(key, value)?,
            other => {
                return Err(Error::invalid(format!(
                    "unknown key `{other}` (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        let crop = self.crop.map_or("auto".to_string(), |(h, w)| format!("{h}x{w}"));
        let gain = self.init_gain.map_or("none".to_string(), |g| g.to_string());
        [
            format!("lr0 = {}", self.lr0),
            format!("momentum = {}", self.momentum),
            format!("weight_decay = {}", self.weight_decay),
            format!("lr_decay_factor = {}", self.lr_decay_factor),
            format!("decay_epochs = {}", join(&self.decay_epochs)),
            format!("dropout_rate = {}", self.dropout_rate),
            format!("batch = {}", self.batch),
            format!("crop = {crop}"),
            format!("crops_per_image = {}", self.crops_per_image),
            format!("resize_min_dim = {}", self.resize_min_dim),
            format!("init_mean = {}", self.init_mean),
            format!("init_std = {}", self.init_std),
            format!("init_gain = {gain}"),
            format!("seed = {}", self.seed),
            format!("epochs = {}", self.epochs),
            format!("negatives_per_image = {}", self.negatives_per_image),
            format!("negative_mode = {}", self.negative_mode),
            format!("heads = {}", self.heads),
            format!("scales = {}", self.scales),
            format!("first_scale = {}", self.first_scale),
        ]
        .iter()
        .map(|l| format!("{l}\n"))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr0, c.momentum, c.weight_decay), (5e-2, 0.6, 1e-5));
        assert_eq!(c.decay_epochs, vec![30, 50, 60, 70, 80]);
        assert_eq!((c.batch, c.crops_per_image, c.resize_min_dim), (128, 5, 256));
        assert_eq!((c.init_mean, c.init_std, c.dropout_rate), (0.0, 1e-2, 0.5));
    }

    #[test]
    fn text_round_trip_and_errors() {
        let c = TrainConfig {
            crop: Some((34, 30)),
            negative_mode: NegativeMode::Hardest,
            ..TrainConfig::toy(48)
        };
        let back = TrainConfig::default().parse_overrides(&c.to_text(), Path::new("c")).unwrap();
        assert_eq!(back, c);
        let e = TrainConfig::default()
            .parse_overrides("lr0 = 0.1\n\nbogus = 1\n", Path::new("c.cfg"))
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(TrainConfig::default().parse_overrides("momentum = 1.5", Path::new("c")).is_err());
    }
}
