//! Model and training hyperparameters, addressable by dotted keys.
//!
//! Defaults reproduce the full-size configuration: 2.5 ms frames at 8 kHz,
//! 256 conv + 11 spectral channels, 8 blocks × 4 repeats, D = 20, K = 4,
//! N = 2, one k-means iteration, α = 1.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use crate::dsp::{StftConfig, DEFAULT_LOG_FLOOR, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{}'", stringify!($name), other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// Normalization inside residual blocks.
    NormKind { Global => "global", Channel => "channel" }
);
keyword_enum!(
    /// Mask estimation route of the separator.
    SeparatorMode { Clustering => "clustering", Direct => "direct" }
);
keyword_enum!(KMeansMode { Hard => "hard", Soft => "soft" });
keyword_enum!(
    /// How dot-product logits become masks.
    MaskNorm { Softmax => "softmax", Raw => "raw" }
);
keyword_enum!(
    /// Domain in which the spectral-path masks are applied.
    MaskDomain { Linear => "linear", Log => "log" }
);

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub log_floor: f64,
    pub conv_channels: usize,
    pub spectral: bool,
    pub bottleneck: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub repeats: usize,
    pub norm: NormKind,
    pub mode: SeparatorMode,
    pub embed_dim: usize,
    pub centers: usize,
    pub speakers: usize,
    pub kmeans_iters: usize,
    pub kmeans_train: KMeansMode,
    pub kmeans_eval: KMeansMode,
    pub mask_norm: MaskNorm,
    pub alpha: f64,
    pub mask_domain: MaskDomain,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sample_rate: DEFAULT_SAMPLE_RATE,
            stft: StftConfig::default(),
            log_floor: DEFAULT_LOG_FLOOR,
            conv_channels: 256,
            spectral: true,
            bottleneck: 256,
            hidden: 512,
            kernel: 3,
            blocks: 8,
            repeats: 4,
            norm: NormKind::Global,
            mode: SeparatorMode::Clustering,
            embed_dim: 20,
            centers: 4,
            speakers: 2,
            kmeans_iters: 1,
            kmeans_train: KMeansMode::Soft,
            kmeans_eval: KMeansMode::Soft,
            mask_norm: MaskNorm::Softmax,
            alpha: 1.0,
            mask_domain: MaskDomain::Linear,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn spectral_channels(&self) -> usize {
        if self.spectral {
            self.stft.bins()
        } else {
            0
        }
    }

    /// Total feature-map channels F.
    pub fn feature_channels(&self) -> usize {
        self.conv_channels + self.spectral_channels()
    }

    /// One-sided receptive field of the embedding network, in frames.
    pub fn receptive_half_width(&self) -> usize {
        let per_repeat: usize = (0..self.blocks).map(|b| (self.kernel - 1) / 2 * (1 << b)).sum();
        per_repeat * self.repeats
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return fail("data.sample_rate must be positive".into());
        }
        if !(self.log_floor > 0.0) {
            return fail("stft.log_floor must be positive".into());
        }
        if self.conv_channels == 0 || self.bottleneck == 0 || self.hidden == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return fail(format!("separator.kernel must be odd, got {}", self.kernel));
        }
        if self.blocks == 0 || self.repeats == 0 || self.blocks > 30 {
            return fail("separator.blocks must be in 1..=30 and separator.repeats >= 1".into());
        }
        if self.embed_dim == 0 {
            return fail("separator.embed_dim must be positive".into());
        }
        if self.speakers < 2 {
            return fail(format!("separator.speakers must be >= 2, got {}", self.speakers));
        }
        if self.speakers > 8 {
            return fail("separator.speakers above 8 makes PIT enumeration impractical".into());
        }
        if self.mode == SeparatorMode::Clustering && self.centers < self.speakers {
            return fail(format!(
                "separator.centers ({}) must be >= separator.speakers ({})",
                self.centers, self.speakers
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("decoder.alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !self.spectral && self.alpha != 1.0 {
            return fail("decoder.alpha must be 1 when encoder.spectral = false".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub segment_seconds: f64,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            segment_seconds: 4.0,
            epochs: 100,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            clip_norm: 5.0,
            lr_patience: 3,
            lr_decay: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let seg = self.segment_seconds * model.sample_rate as f64;
        if !(seg >= model.stft.frame_len as f64) {
            return Err(Error::Config(format!(
                "train.segment_seconds too short: {} samples < frame_len {}",
                seg, model.stft.frame_len
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("train.lr and train.clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("train.lr_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn segment_samples(&self, sample_rate: u32) -> usize {
        libm::round(self.segment_seconds * sample_rate as f64) as usize
    }
}

/// Every hyperparameter of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Dotted keys in serialization order.
pub const KEYS: &[&str] = &[
    "data.sample_rate",
    "stft.frame_len",
    "stft.hop",
    "stft.log_floor",
    "encoder.conv_channels",
    "encoder.spectral",
    "separator.bottleneck",
    "separator.hidden",
    "separator.kernel",
    "separator.blocks",
    "separator.repeats",
    "separator.norm",
    "separator.mode",
    "separator.embed_dim",
    "separator.centers",
    "separator.speakers",
    "separator.kmeans_iters",
    "separator.kmeans_train",
    "separator.kmeans_eval",
    "separator.mask_norm",
    "separator.init_seed",
    "decoder.alpha",
    "decoder.mask_domain",
    "train.segment_seconds",
    "train.epochs",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.adam_eps",
    "train.batch_size",
    "train.clip_norm",
    "train.lr_patience",
    "train.lr_decay",
    "train.seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for key '{key}'"))),
    }
}

impl RunConfig {
    /// Set one dotted key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "data.sample_rate" => m.sample_rate = parse(key, v)?,
            "stft.frame_len" => m.stft.frame_len = parse(key, v)?,
            "stft.hop" => m.stft.hop = parse(key, v)?,
            "stft.log_floor" => m.log_floor = parse(key, v)?,
            "encoder.conv_channels" => m.conv_channels = parse(key, v)?,
            "encoder.spectral" => m.spectral = parse_bool(key, v)?,
            "separator.bottleneck" => m.bottleneck = parse(key, v)?,
            "separator.hidden" => m.hidden = parse(key, v)?,
            "separator.kernel" => m.kernel = parse(key, v)?,
            "separator.blocks" => m.blocks = parse(key, v)?,
            "separator.repeats" => m.repeats = parse(key, v)?,
            "separator.norm" => m.norm = v.parse()?,
            "separator.mode" => m.mode = v.parse()?,
            "separator.embed_dim" => m.embed_dim = parse(key, v)?,
            "separator.centers" => m.centers = parse(key, v)?,
            "separator.speakers" => m.speakers = parse(key, v)?,
            "separator.kmeans_iters" => m.kmeans_iters = parse(key, v)?,
            "separator.kmeans_train" => m.kmeans_train = v.parse()?,
            "separator.kmeans_eval" => m.kmeans_eval = v.parse()?,
            "separator.mask_norm" => m.mask_norm = v.parse()?,
            "separator.init_seed" => m.init_seed = parse(key, v)?,
            "decoder.alpha" => m.alpha = parse(key, v)?,
            "decoder.mask_domain" => m.mask_domain = v.parse()?,
            "train.segment_seconds" => t.segment_seconds = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.beta1" => t.beta1 = parse(key, v)?,
            "train.beta2" => t.beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam_eps = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.clip_norm" => t.clip_norm = parse(key, v)?,
            "train.lr_patience" => t.lr_patience = parse(key, v)?,
            "train.lr_decay" => t.lr_decay = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        let s = match key {
            "data.sample_rate" => m.sample_rate.to_string(),
            "stft.frame_len" => m.stft.frame_len.to_string(),
            "stft.hop" => m.stft.hop.to_string(),
            "stft.log_floor" => format!("{:e}", m.log_floor),
            "encoder.conv_channels" => m.conv_channels.to_string(),
            "encoder.spectral" => m.spectral.to_string(),
            "separator.bottleneck" => m.bottleneck.to_string(),
            "separator.hidden" => m.hidden.to_string(),
            "separator.kernel" => m.kernel.to_string(),
            "separator.blocks" => m.blocks.to_string(),
            "separator.repeats" => m.repeats.to_string(),
            "separator.norm" => m.norm.as_str().into(),
            "separator.mode" => m.mode.as_str().into(),
            "separator.embed_dim" => m.embed_dim.to_string(),
            "separator.centers" => m.centers.to_string(),
            "separator.speakers" => m.speakers.to_string(),
            "separator.kmeans_iters" => m.kmeans_iters.to_string(),
            "separator.kmeans_train" => m.kmeans_train.as_str().into(),
            "separator.kmeans_eval" => m.kmeans_eval.as_str().into(),
            "separator.mask_norm" => m.mask_norm.as_str().into(),
            "separator.init_seed" => m.init_seed.to_string(),
            "decoder.alpha" => m.alpha.to_string(),
            "decoder.mask_domain" => m.mask_domain.as_str().into(),
            "train.segment_seconds" => t.segment_seconds.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.adam_eps" => format!("{:e}", t.adam_eps),
            "train.batch_size" => t.batch_size.to_string(),
            "train.clip_norm" => t.clip_norm.to_string(),
            "train.lr_patience" => t.lr_patience.to_string(),
            "train.lr_decay" => t.lr_decay.to_string(),
            "train.seed" => t.seed.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// `key = value` lines; `#` starts a comment. Later lines override earlier ones.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{}'", n + 1, raw))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            // every key in KEYS has a getter
            let _ = writeln!(s, "{} = {}", key, self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|k| (*k, self.get(k).unwrap_or_default())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_stable() {
        let mut cfg = RunConfig::default();
        cfg.set("decoder.alpha", "0.5").unwrap();
        cfg.set("separator.mode", "direct").unwrap();
        cfg.set("train.lr", "0.0003").unwrap();
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("separator.dilation", "2").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("separator.dilation")));
        assert!(cfg.set("separator.mode", "kmeans").is_err());
        assert!(cfg.set("train.epochs", "-1").is_err());
    }

    #[test]
    fn every_key_has_a_getter() {
        let cfg = RunConfig::default();
        for k in KEYS {
            assert!(cfg.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn validation_catches_bad_combinations() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.model.centers = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.spectral = false;
        cfg.model.alpha = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.train.segment_seconds = 0.001;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn default_feature_channels() {
        let m = ModelConfig::default();
        assert_eq!(m.feature_channels(), 267);
        assert_eq!(m.receptive_half_width(), 4 * 255);
    }

    #[test]
    fn defaults_match_published_hyperparameters() {
        let m = ModelConfig::default();
        assert_eq!(m.stft.frame_len as f64 / m.sample_rate as f64, 0.0025);
        assert_eq!(m.stft.bins(), 11);
        assert_eq!(m.conv_channels, 256);
        assert_eq!(m.bottleneck, 256);
        assert_eq!((m.blocks, m.repeats), (8, 4));
        assert_eq!(m.embed_dim, 20);
        assert_eq!((m.centers, m.kmeans_iters, m.speakers), (4, 1, 2));
        assert_eq!(m.alpha, 1.0);
        assert_eq!(TrainConfig::default().segment_seconds, 4.0);
    }
}
