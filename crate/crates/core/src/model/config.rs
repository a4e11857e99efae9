use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Building block used in every encoder and decoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Point/group/point convolutions with channel and spatial attention on
    /// the residual path.
    ResAttn,
    /// Two ungrouped 3×3 conv → BN → ReLU layers, as in the original U-Net.
    DoubleConv,
}

/// How an upsampled decoder tensor is merged with its encoder partner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipMode {
    Sum,
    Concat,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::ResAttn => "resattn",
            BlockKind::DoubleConv => "double_conv",
        })
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resattn" => Ok(BlockKind::ResAttn),
            "double_conv" => Ok(BlockKind::DoubleConv),
            _ => Err(Error::Config(format!(
                "unknown block kind `{s}` (expected resattn or double_conv)"
            ))),
        }
    }
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::Sum => "sum",
            SkipMode::Concat => "concat",
        })
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(SkipMode::Sum),
            "concat" => Ok(SkipMode::Concat),
            _ => Err(Error::Config(format!(
                "unknown skip mode `{s}` (expected sum or concat)"
            ))),
        }
    }
}

/// Declarative description of the encoder-decoder.
///
/// Encoder stage `i` runs `encoder_blocks[i]` blocks ending at
/// `encoder_widths[i]` channels, followed by a 2×2 max-pool except after the
/// last stage. Decoder stage `j` upsamples with a stride-2 transposed
/// convolution to the width of the matching encoder stage, merges the skip,
/// and runs `decoder_blocks[j]` blocks ending at `decoder_widths[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub block: BlockKind,
    pub skip: SkipMode,
    pub encoder_widths: Vec<usize>,
    pub encoder_blocks: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub decoder_blocks: Vec<usize>,
    /// The 3×3 convolution of a block with `f_out` channels uses
    /// `gcd(group_base, f_out)` groups. 1 disables grouping.
    pub group_base: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    pub alpha_init: f64,
    pub beta_init: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::proposed()
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: `{s}` is not a non-negative integer")))
        })
        .collect()
}

fn parse_num<F: FromStr>(key: &str, value: &str) -> Result<F> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

impl ModelConfig {
    pub const KEYS: [&'static str; 13] = [
        "block",
        "skip",
        "encoder_widths",
        "encoder_blocks",
        "decoder_widths",
        "decoder_blocks",
        "group_base",
        "input_channels",
        "output_channels",
        "alpha_init",
        "beta_init",
        "bn_momentum",
        "bn_epsilon",
    ];

    /// The lightweight network: five encoder stages from 32 to 512 channels,
    /// four decoder stages ending at 64, summation skips, grouped 3×3s.
    ///
    /// The deepest stage carries six blocks so that parameter and FLOP counts
    /// land near the 5.17M / 4.9 GFLOPs targets.
    pub fn proposed() -> Self {
        ModelConfig {
            block: BlockKind::ResAttn,
            skip: SkipMode::Sum,
            encoder_widths: vec![32, 64, 128, 256, 512],
            encoder_blocks: vec![2, 2, 2, 2, 6],
            decoder_widths: vec![256, 128, 64, 64],
            decoder_blocks: vec![1, 1, 1, 1],
            group_base: 32,
            input_channels: 3,
            output_channels: 1,
            alpha_init: 1.0,
            beta_init: 1.0,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        }
    }

    /// Classic U-Net: 64..1024 channels, concatenation skips, double 3×3
    /// conv blocks without grouping.
    pub fn vanilla_unet() -> Self {
        ModelConfig {
            block: BlockKind::DoubleConv,
            skip: SkipMode::Concat,
            encoder_widths: vec![64, 128, 256, 512, 1024],
            encoder_blocks: vec![1; 5],
            decoder_widths: vec![512, 256, 128, 64],
            decoder_blocks: vec![1; 4],
            group_base: 1,
            ..Self::proposed()
        }
    }

    /// Small three-stage network for desk-scale runs and tests.
    pub fn reduced() -> Self {
        ModelConfig {
            encoder_widths: vec![8, 16, 32],
            encoder_blocks: vec![1, 1, 1],
            decoder_widths: vec![16, 8],
            decoder_blocks: vec![1, 1],
            ..Self::proposed()
        }
    }

    /// Named preset: `proposed`, `vanilla` or `reduced`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "proposed" => Ok(Self::proposed()),
            "vanilla" => Ok(Self::vanilla_unet()),
            "reduced" => Ok(Self::reduced()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected proposed, vanilla or reduced)"
            ))),
        }
    }

    pub fn groups_for(&self, f_out: usize) -> usize {
        gcd(self.group_base, f_out).max(1)
    }

    pub fn stages(&self) -> usize {
        self.encoder_widths.len()
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.stages().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let s = self.stages();
        if s == 0 {
            return bad("encoder_widths is empty".into());
        }
        if self.encoder_blocks.len() != s {
            return bad(format!(
                "encoder_blocks has {} entries for {s} encoder stages",
                self.encoder_blocks.len()
            ));
        }
        if self.decoder_widths.len() != s - 1 {
            return bad(format!(
                "decoder_widths has {} entries; {s} encoder stages need {}",
                self.decoder_widths.len(),
                s - 1
            ));
        }
        if self.decoder_blocks.len() != s - 1 {
            return bad(format!(
                "decoder_blocks has {} entries for {} decoder stages",
                self.decoder_blocks.len(),
                s - 1
            ));
        }
        let widths = self.encoder_widths.iter().chain(&self.decoder_widths);
        if widths.clone().any(|&w| w == 0) || self.input_channels == 0 || self.output_channels == 0
        {
            return bad("channel counts must be positive".into());
        }
        if self
            .encoder_blocks
            .iter()
            .chain(&self.decoder_blocks)
            .any(|&b| b == 0)
        {
            return bad("every stage needs at least one block".into());
        }
        if self.group_base == 0 {
            return bad("group_base must be positive".into());
        }
        if !(self.alpha_init.is_finite() && self.beta_init.is_finite()) {
            return bad("alpha_init and beta_init must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum)
            || self.bn_epsilon.is_nan()
            || self.bn_epsilon <= 0.0
        {
            return bad("bn_momentum must be in [0, 1] and bn_epsilon positive".into());
        }
        Ok(())
    }

    /// Ordered `key=value` pairs covering every field.
    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("block", self.block.to_string()),
            ("skip", self.skip.to_string()),
            ("encoder_widths", join(&self.encoder_widths)),
            ("encoder_blocks", join(&self.encoder_blocks)),
            ("decoder_widths", join(&self.decoder_widths)),
            ("decoder_blocks", join(&self.decoder_blocks)),
            ("group_base", self.group_base.to_string()),
            ("input_channels", self.input_channels.to_string()),
            ("output_channels", self.output_channels.to_string()),
            ("alpha_init", self.alpha_init.to_string()),
            ("beta_init", self.beta_init.to_string()),
            ("bn_momentum", self.bn_momentum.to_string()),
            ("bn_epsilon", self.bn_epsilon.to_string()),
        ]
    }

    /// Sets one field from its text form. Returns `Ok(false)` for a key that
    /// is not a model key, so callers can route it elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "block" => self.block = value.trim().parse()?,
            "skip" => self.skip = value.trim().parse()?,
            "encoder_widths" => self.encoder_widths = parse_list(key, value)?,
            "encoder_blocks" => self.encoder_blocks = parse_list(key, value)?,
            "decoder_widths" => self.decoder_widths = parse_list(key, value)?,
            "decoder_blocks" => self.decoder_blocks = parse_list(key, value)?,
            "group_base" => self.group_base = parse_num(key, value)?,
            "input_channels" => self.input_channels = parse_num(key, value)?,
            "output_channels" => self.output_channels = parse_num(key, value)?,
            "alpha_init" => self.alpha_init = parse_num(key, value)?,
            "beta_init" => self.beta_init = parse_num(key, value)?,
            "bn_momentum" => self.bn_momentum = parse_num(key, value)?,
            "bn_epsilon" => self.bn_epsilon = parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv_text(&self) -> String {
        self.to_kv()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Parses the output of [`ModelConfig::to_kv_text`]. Every key is
    /// required so that a stored config cannot silently pick up new defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::proposed();
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line `{line}`")))?;
            let k = k.trim();
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
            seen.push(k.to_string());
        }
        if let Some(missing) = Self::KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(Error::Config(format!("missing model key `{missing}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
