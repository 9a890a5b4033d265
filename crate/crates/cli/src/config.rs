//! Run configuration: scene, model and optimizer settings in one
//! `key=value` file.

use std::collections::BTreeMap;
use std::path::Path;

use emoseg::model::{format_f64, parse, parse_list, Fusion, ModelConfig, TrainHyper};
use emoseg::supervision::SupervisionSource;
use emoseg::synthscene::SceneConfig;
use emoseg::{Error, Result};

/// Everything a run depends on.
///
/// Scene keys are written `scene.<name>`, architecture keys `model.<name>`;
/// the remaining keys are top-level. Input size and clip length come from the
/// scene section.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub channels: usize,
    pub expand_channels: usize,
    pub rank: usize,
    pub scales: Vec<f64>,
    pub fusion: Fusion,
    pub lambda_st: f64,
    pub sup_source: SupervisionSource,
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    /// Fraction of generated sequences placed in the test split.
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            seed: 0,
            scene: SceneConfig::default(),
            channels: m.channels,
            expand_channels: m.expand_channels,
            rank: m.rank,
            scales: m.scales,
            fusion: m.fusion,
            lambda_st: m.lambda_st,
            sup_source: SupervisionSource::EventGtDilated,
            lr: TrainHyper::default().lr,
            weight_decay: TrainHyper::default().weight_decay,
            steps: 2000,
            batch_size: 4,
            log_every: 10,
            test_fraction: 0.2,
        }
    }
}

impl RunConfig {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("seed".to_string(), self.seed.to_string())];
        out.extend(self.scene.to_pairs().into_iter().map(|(k, v)| (format!("scene.{k}"), v)));
        let rest = [
            ("model.channels", self.channels.to_string()),
            ("model.expand_channels", self.expand_channels.to_string()),
            ("model.rank", self.rank.to_string()),
            ("model.scales", self.scales.iter().map(|s| format_f64(*s)).collect::<Vec<_>>().join(",")),
            ("fusion", self.fusion.to_string()),
            ("lambda_st", format_f64(self.lambda_st)),
            ("sup_source", self.sup_source.name().to_string()),
            ("lr", format_f64(self.lr)),
            ("weight_decay", format_f64(self.weight_decay)),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("log_every", self.log_every.to_string()),
            ("test_fraction", format_f64(self.test_fraction)),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    /// Fully resolved configuration, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses a config file. Missing keys take defaults; unknown keys are
    /// rejected. Blank lines and `#` comments are ignored. When
    /// `model.channels` is given without `model.expand_channels` or
    /// `model.rank`, those follow the channel count.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", no + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{}'", no + 1, k.trim())));
            }
        }

        let mut cfg = RunConfig::default();
        if let Some(c) = kv.remove("model.channels") {
            let derived = ModelConfig::new(64, 64, parse(&c, "model.channels")?);
            cfg.channels = derived.channels;
            cfg.expand_channels = derived.expand_channels;
            cfg.rank = derived.rank;
        }
        for (k, v) in &kv {
            match k.as_str() {
                "seed" => cfg.seed = parse(v, k)?,
                "model.expand_channels" => cfg.expand_channels = parse(v, k)?,
                "model.rank" => cfg.rank = parse(v, k)?,
                "model.scales" => cfg.scales = parse_list(v, k)?,
                "fusion" => cfg.fusion = v.parse()?,
                "lambda_st" => cfg.lambda_st = parse(v, k)?,
                "sup_source" => cfg.sup_source = v.parse()?,
                "lr" => cfg.lr = parse(v, k)?,
                "weight_decay" => cfg.weight_decay = parse(v, k)?,
                "steps" => cfg.steps = parse(v, k)?,
                "batch_size" => cfg.batch_size = parse(v, k)?,
                "log_every" => cfg.log_every = parse(v, k)?,
                "test_fraction" => cfg.test_fraction = parse(v, k)?,
                _ => match k.strip_prefix("scene.") {
                    Some(sk) => cfg.scene.set(sk, v)?,
                    None => return Err(Error::Config(format!("unknown key '{k}'"))),
                },
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        RunConfig::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model_config(true).validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive and weight_decay non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction must be in [0,1], got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Model architecture for this run.
    pub fn model_config(&self, prior: bool) -> ModelConfig {
        ModelConfig {
            frames: self.scene.frames,
            height: self.scene.height,
            width: self.scene.width,
            channels: self.channels,
            expand_channels: self.expand_channels,
            rank: self.rank,
            lambda_st: self.lambda_st,
            scales: self.scales.clone(),
            seed: self.seed,
            fusion: self.fusion,
            prior,
        }
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..TrainHyper::default()
        }
    }
}
