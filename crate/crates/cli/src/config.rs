//! Flat `key=value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use resattn::data::AugmentConfig;
use resattn::model::ModelConfig;
use resattn::train::TrainConfig;
use resattn::{Error, Result};

/// Everything a command needs besides paths. Model keys use the names of
/// [`ModelConfig::KEYS`]; `preset=<name>` picks the starting model and is
/// applied before any other key regardless of its position.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tta: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::proposed(),
            train: TrainConfig::default(),
            tta: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{}` for `{key}`", value.trim())))
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("`{key}` takes two comma-separated numbers")))?;
    Ok((parse(key, a)?, parse(key, b)?))
}

impl RunConfig {
    /// Non-model keys in the order they are written.
    pub const KEYS: [&'static str; 26] = [
        "epochs",
        "batch_size",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "lambda_bce",
        "lambda_dice",
        "patch_size",
        "threshold",
        "seed",
        "tta",
        "aug_p_dihedral",
        "aug_p_crop",
        "aug_crop_scale",
        "aug_crop_ratio",
        "aug_p_affine",
        "aug_max_rotation_deg",
        "aug_max_translate",
        "aug_p_hsv",
        "aug_max_hue_shift",
        "aug_max_sv_scale",
        "aug_p_median",
        "aug_p_noise",
        "aug_max_noise_sigma",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let t = &mut self.train;
        let a: &mut AugmentConfig = &mut t.augment;
        match key {
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.optimizer.lr = parse(key, value)?,
            "beta1" => t.optimizer.beta1 = parse(key, value)?,
            "beta2" => t.optimizer.beta2 = parse(key, value)?,
            "eps" => t.optimizer.eps = parse(key, value)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, value)?,
            "lambda_bce" => t.loss.bce = parse(key, value)?,
            "lambda_dice" => t.loss.dice = parse(key, value)?,
            "patch_size" => t.patch_size = parse(key, value)?,
            "threshold" => t.threshold = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "tta" => self.tta = parse(key, value)?,
            "aug_p_dihedral" => a.p_dihedral = parse(key, value)?,
            "aug_p_crop" => a.p_crop = parse(key, value)?,
            "aug_crop_scale" => a.crop_scale = parse_pair(key, value)?,
            "aug_crop_ratio" => a.crop_ratio = parse_pair(key, value)?,
            "aug_p_affine" => a.p_affine = parse(key, value)?,
            "aug_max_rotation_deg" => a.max_rotation_deg = parse(key, value)?,
            "aug_max_translate" => a.max_translate = parse(key, value)?,
            "aug_p_hsv" => a.p_hsv = parse(key, value)?,
            "aug_max_hue_shift" => a.max_hue_shift = parse(key, value)?,
            "aug_max_sv_scale" => a.max_sv_scale = parse(key, value)?,
            "aug_p_median" => a.p_median = parse(key, value)?,
            "aug_p_noise" => a.p_noise = parse(key, value)?,
            "aug_max_noise_sigma" => a.max_noise_sigma = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        let a = &t.augment;
        match key {
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.optimizer.lr.to_string(),
            "beta1" => t.optimizer.beta1.to_string(),
            "beta2" => t.optimizer.beta2.to_string(),
            "eps" => t.optimizer.eps.to_string(),
            "weight_decay" => t.optimizer.weight_decay.to_string(),
            "lambda_bce" => t.loss.bce.to_string(),
            "lambda_dice" => t.loss.dice.to_string(),
            "patch_size" => t.patch_size.to_string(),
            "threshold" => t.threshold.to_string(),
            "seed" => t.seed.to_string(),
            "tta" => self.tta.to_string(),
            "aug_p_dihedral" => a.p_dihedral.to_string(),
            "aug_p_crop" => a.p_crop.to_string(),
            "aug_crop_scale" => format!("{},{}", a.crop_scale.0, a.crop_scale.1),
            "aug_crop_ratio" => format!("{},{}", a.crop_ratio.0, a.crop_ratio.1),
            "aug_p_affine" => a.p_affine.to_string(),
            "aug_max_rotation_deg" => a.max_rotation_deg.to_string(),
            "aug_max_translate" => a.max_translate.to_string(),
            "aug_p_hsv" => a.p_hsv.to_string(),
            "aug_max_hue_shift" => a.max_hue_shift.to_string(),
            "aug_max_sv_scale" => a.max_sv_scale.to_string(),
            "aug_p_median" => a.p_median.to_string(),
            "aug_p_noise" => a.p_noise.to_string(),
            "aug_max_noise_sigma" => a.max_noise_sigma.to_string(),
            _ => unreachable!("not a run key: {key}"),
        }
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// unknown and repeated keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1))
            })?;
            let k = k.trim();
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::Config(format!("key `{k}` given twice")));
            }
            pairs.push((k, v));
        }
        let mut cfg = RunConfig::default();
        if let Some((_, name)) = pairs.iter().find(|(k, _)| *k == "preset") {
            cfg.model = ModelConfig::preset(name.trim())?;
        }
        for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.patch_size == 0 {
            return Err(Error::Config(
                "batch_size and patch_size must be positive".into(),
            ));
        }
        if !t.patch_size.is_multiple_of(self.model.spatial_multiple()) {
            return Err(Error::Config(format!(
                "patch_size {} is not a multiple of {}",
                t.patch_size,
                self.model.spatial_multiple()
            )));
        }
        let lr_ok = t.optimizer.lr.is_finite() && t.optimizer.lr > 0.0;
        if !lr_ok || !(0.0..=1.0).contains(&t.threshold) {
            return Err(Error::Config(
                "lr must be positive and threshold in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its resolved value, model keys first.
    pub fn to_text(&self) -> String {
        let mut s = self.model.to_kv_text();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k));
        }
        s
    }

    /// Writes the resolved config as `config.txt` in `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}
