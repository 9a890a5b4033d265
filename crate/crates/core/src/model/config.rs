use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the RGB feature and the motion prior are merged before decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// Low-rank projections with spatial-softmax attention.
    Attention,
    /// `F_rgb + F_m`.
    Add,
    /// `F_rgb ∘ F_m`.
    Mul,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Attention => "ours",
            Fusion::Add => "add",
            Fusion::Mul => "mul",
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" | "attention" => Ok(Fusion::Attention),
            "add" => Ok(Fusion::Add),
            "mul" => Ok(Fusion::Mul),
            other => Err(Error::InvalidArgument(format!("unknown fusion variant '{other}'"))),
        }
    }
}

/// Architecture and loss settings of the segmentation model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Frames per clip.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Feature channels `C`.
    pub channels: usize,
    /// Expansion channels of the prior generator (`C'`).
    pub expand_channels: usize,
    /// Low-rank fusion width `r`.
    pub rank: usize,
    pub lambda_st: f64,
    /// Multi-scale inference factors.
    pub scales: Vec<f64>,
    pub seed: u64,
    pub fusion: Fusion,
    /// Whether the motion-prior branch exists. Without it the model is the
    /// plain RGB encoder-decoder.
    pub prior: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::new(64, 64, 32)
    }
}

impl ModelConfig {
    /// Defaults for the given input size and channel count: `C' = 2C`,
    /// `r = C/4`, two frames, `λ_ST = 1`.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ModelConfig {
            frames: 2,
            height,
            width,
            channels,
            expand_channels: 2 * channels,
            rank: (channels / 4).max(1),
            lambda_st: 1.0,
            scales: vec![0.75, 1.0, 1.25],
            seed: 0,
            fusion: Fusion::Attention,
            prior: true,
        }
    }

    /// Feature resolution after the stride-4 encoder.
    pub fn feature_size(&self) -> (usize, usize) {
        (self.height / 4, self.width / 4)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames == 0 {
            return fail("frames must be at least 1".into());
        }
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return fail(format!(
                "input size {}x{} must be a positive multiple of 4",
                self.height, self.width
            ));
        }
        if self.channels < 2 || self.channels % 2 != 0 {
            return fail(format!("channels must be even and >= 2, got {}", self.channels));
        }
        if self.expand_channels == 0 {
            return fail("expand_channels must be positive".into());
        }
        if self.rank == 0 || self.rank >= self.channels {
            return fail(format!(
                "rank must satisfy 1 <= r < C, got r={} C={}",
                self.rank, self.channels
            ));
        }
        if !(self.lambda_st >= 0.0 && self.lambda_st.is_finite()) {
            return fail(format!("lambda_st must be finite and >= 0, got {}", self.lambda_st));
        }
        if !self.scales.contains(&1.0) {
            return fail("scales must contain 1.0".into());
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return fail("scales must be positive".into());
        }
        Ok(())
    }

    /// `key=value` pairs, one per field.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("frames", self.frames.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("expand_channels", self.expand_channels.to_string()),
            ("rank", self.rank.to_string()),
            ("lambda_st", format_f64(self.lambda_st)),
            ("scales", self.scales.iter().map(|s| format_f64(*s)).collect::<Vec<_>>().join(",")),
            ("seed", self.seed.to_string()),
            ("fusion", self.fusion.to_string()),
            ("prior", self.prior.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses the output of [`to_text`](Self::to_text). Every field is required.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line '{line}'")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Config(format!("missing key '{k}'")));
        let cfg = ModelConfig {
            frames: parse(&take("frames")?, "frames")?,
            height: parse(&take("height")?, "height")?,
            width: parse(&take("width")?, "width")?,
            channels: parse(&take("channels")?, "channels")?,
            expand_channels: parse(&take("expand_channels")?, "expand_channels")?,
            rank: parse(&take("rank")?, "rank")?,
            lambda_st: parse(&take("lambda_st")?, "lambda_st")?,
            scales: parse_list(&take("scales")?, "scales")?,
            seed: parse(&take("seed")?, "seed")?,
            fusion: take("fusion")?.parse()?,
            prior: parse(&take("prior")?, "prior")?,
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key '{k}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Errors unless `other` describes the same architecture.
    pub fn ensure_compatible(&self, other: &ModelConfig) -> Result<()> {
        let mine = self.to_pairs();
        let theirs = other.to_pairs();
        for ((k, a), (_, b)) in mine.iter().zip(&theirs) {
            if matches!(*k, "seed" | "lambda_st" | "scales" | "frames") {
                continue;
            }
            if a != b {
                return Err(Error::ConfigMismatch(format!("{k}: checkpoint has {a}, expected {b}")));
            }
        }
        Ok(())
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn parse<V: FromStr>(s: &str, key: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    s.parse()
        .map_err(|e| Error::Config(format!("bad value '{s}' for '{key}': {e}")))
}

pub fn parse_list(s: &str, key: &str) -> Result<Vec<f64>> {
    s.split(',').map(|p| parse(p.trim(), key)).collect()
}
