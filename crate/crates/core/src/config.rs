//! Codec and training configuration.
//!
//! Every tunable constant lives here with its default so that a TOML file
//! fully describes a run. Values without a published source (loss weights,
//! init schemes, schedule lengths) are ordinary fields like any other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How the 16 line spectral frequencies share centroids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LspCodebookMode {
    /// One codebook for all coefficients.
    Shared,
    /// An independent codebook per coefficient.
    PerCoefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Nominal rate the preset was chosen for; also the bitrate-control target.
    pub target_bitrate_kbps: f64,
    pub n_autoencoders: usize,
    pub n_downsample_stages: usize,
    pub channels: usize,
    pub bottleneck_channels: usize,
    pub kernel_width: usize,
    pub blocks_per_stage: usize,
    pub leaky_slope: f64,
    pub lpc_order: usize,
    pub lsp_centroids: usize,
    pub lsp_codebook: LspCodebookMode,
    /// Smallest spacing of quantized LSPs (rad); 50 Hz bounds resonance sharpness.
    pub lsp_min_gap: f64,
    pub residual_centroids: usize,
    pub alpha: f64,
    /// Compute the residual from quantized rather than raw coefficients.
    pub residual_from_quantized_lpc: bool,
    /// Gain applied after pre-emphasis (and undone before de-emphasis) so
    /// the model works at unit RMS; training sets it from the corpus.
    pub input_gain: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            target_bitrate_kbps: 16.0,
            n_autoencoders: 1,
            n_downsample_stages: 1,
            channels: 100,
            bottleneck_channels: 20,
            kernel_width: 9,
            blocks_per_stage: 2,
            leaky_slope: 0.01,
            lpc_order: crate::lpc::LPC_ORDER,
            lsp_centroids: crate::quant::LSP_CENTROIDS,
            lsp_codebook: LspCodebookMode::Shared,
            lsp_min_gap: 2.0 * std::f64::consts::PI * 50.0 / 16_000.0,
            residual_centroids: crate::quant::RESIDUAL_CENTROIDS,
            alpha: crate::quant::DEFAULT_ALPHA,
            residual_from_quantized_lpc: true,
            input_gain: 1.0,
        }
    }
}

impl CodecConfig {
    /// Preset for one of the four published operating points.
    pub fn for_bitrate(kbps: f64) -> Result<Self, ConfigError> {
        let base = Self { target_bitrate_kbps: kbps, ..Self::default() };
        match kbps as u32 {
            9 => Ok(Self { n_downsample_stages: 2, ..base }),
            16 | 20 => Ok(base),
            24 => Ok(Self { n_autoencoders: 2, ..base }),
            _ => Err(ConfigError::Invalid(format!("no preset for {kbps} kbps"))),
        }
    }

    /// Code symbols per frame and autoencoder.
    pub fn code_width(&self) -> usize {
        crate::signal::CODING_LEN >> self.n_downsample_stages
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.n_autoencoders == 0 {
            return bad("n_autoencoders must be at least 1");
        }
        if !(1..=2).contains(&self.n_downsample_stages) {
            return bad("n_downsample_stages must be 1 or 2");
        }
        if self.channels < 2 || self.channels % 2 != 0 || self.bottleneck_channels == 0 {
            return bad("channels must be even and bottleneck_channels positive");
        }
        if self.kernel_width % 2 == 0 {
            return bad("kernel_width must be odd");
        }
        if self.lpc_order == 0 || self.lpc_order % 2 != 0 {
            return bad("lpc_order must be even and positive");
        }
        if self.lsp_centroids < 2 || self.residual_centroids < 2 {
            return bad("codebooks need at least 2 centroids");
        }
        if !self.lsp_centroids.is_power_of_two() || !self.residual_centroids.is_power_of_two() {
            return bad("codebook sizes must be powers of two");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.input_gain > 0.0 && self.input_gain.is_finite()) {
            return bad("input_gain must be positive and finite");
        }
        if !(self.lsp_min_gap >= 0.0) || self.lsp_min_gap * (self.lpc_order + 1) as f64 >= std::f64::consts::PI {
            return bad("lsp_min_gap out of range");
        }
        Ok(())
    }
}

/// Weights of the training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_mse: f64,
    pub lambda_mel: f64,
    pub lambda_quant: f64,
    /// Initial entropy weight; bitrate control rescales it.
    pub lambda_entropy: f64,
    pub mel_bank_sizes: Vec<usize>,
    pub stft_len: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_mse: 60.0,
            lambda_mel: 10.0,
            lambda_quant: 1.0,
            lambda_entropy: 1.0 / 32.0,
            mel_bank_sizes: vec![128, 32, 16, 8],
            stft_len: crate::signal::CODING_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs per cascade stage.
    pub epochs: usize,
    /// Epochs with both quantizers bypassed before codebook initialization.
    pub warmup_epochs: usize,
    /// Joint epochs over all modules after the last stage (cascades only).
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight init: uniform in `+-sqrt(init_gain / fan_in)`.
    pub init_gain: f64,
    /// Glob applied inside the corpus directory.
    pub corpus_glob: String,
    /// Audio used for per-epoch bitrate measurement and bitrate control.
    pub validation_seconds: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 5,
            finetune_epochs: 5,
            batch_size: 128,
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            init_gain: 3.0,
            corpus_glob: "*.wav".to_string(),
            validation_seconds: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitrateConfig {
    pub enabled: bool,
    /// Relative tolerance around the target.
    pub tolerance: f64,
    /// `lambda_entropy` is multiplied or divided by this per adjustment.
    pub factor: f64,
    pub max_iterations: usize,
    /// Finetuning epochs after each adjustment.
    pub epochs_per_iteration: usize,
    /// Frames drawn per finetuning epoch; 0 means the whole training set.
    pub frames_per_iteration: usize,
}

impl Default for BitrateConfig {
    fn default() -> Self {
        Self { enabled: true, tolerance: 0.10, factor: 2.0, max_iterations: 8, epochs_per_iteration: 1, frames_per_iteration: 0 }
    }
}

/// Top-level run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub codec: CodecConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub bitrate: BitrateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            codec: CodecConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            bitrate: BitrateConfig::default(),
        }
    }
}

impl Config {
    /// A small model that trains in minutes on one core.
    ///
    /// Same topology as the full model with narrower layers; the rate target
    /// is scaled by the ratio of code symbols to the two-stage 24 kbps model.
    pub fn toy() -> Self {
        let codec = CodecConfig { channels: 16, bottleneck_channels: 8, ..CodecConfig::default() };
        let full = CodecConfig::for_bitrate(24.0).expect("preset exists");
        let full_symbols = (full.n_autoencoders * full.code_width()) as f64;
        let target = 24.0 * (codec.n_autoencoders * codec.code_width()) as f64 / full_symbols;
        Self {
            codec: CodecConfig { target_bitrate_kbps: target, ..codec },
            train: TrainConfig {
                epochs: 3,
                warmup_epochs: 2,
                finetune_epochs: 7,
                batch_size: 32,
                learning_rate: 1e-3,
                validation_seconds: 10.0,
                ..TrainConfig::default()
            },
            bitrate: BitrateConfig { epochs_per_iteration: 1, frames_per_iteration: 2048, ..BitrateConfig::default() },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.codec.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || !(t.learning_rate >= 0.0) {
            return Err(ConfigError::Invalid("batch_size and learning_rate must be positive".into()));
        }
        if self.loss.mel_bank_sizes.iter().any(|&m| m == 0 || m + 2 > self.loss.stft_len / 2 + 1) {
            return Err(ConfigError::Invalid("mel bank sizes must fit the spectrum".into()));
        }
        let l = &self.loss;
        if [l.lambda_mse, l.lambda_mel, l.lambda_quant, l.lambda_entropy].iter().any(|v| !(*v >= 0.0)) {
            return Err(ConfigError::Invalid("loss weights must be non-negative".into()));
        }
        if !(self.bitrate.factor > 1.0) || !(self.bitrate.tolerance > 0.0) {
            return Err(ConfigError::Invalid("bitrate factor must exceed 1 and tolerance be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_preserves_everything() {
        let mut cfg = Config::toy();
        cfg.codec.lsp_codebook = LspCodebookMode::PerCoefficient;
        let text = cfg.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = Config::from_toml("seed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.loss, LossConfig::default());
    }

    #[test]
    fn presets_follow_operating_points() {
        assert_eq!(CodecConfig::for_bitrate(9.0).unwrap().code_width(), 128);
        assert_eq!(CodecConfig::for_bitrate(16.0).unwrap().code_width(), 256);
        assert_eq!(CodecConfig::for_bitrate(24.0).unwrap().n_autoencoders, 2);
        assert!(CodecConfig::for_bitrate(11.0).is_err());
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(Config::from_toml("[codec]\nn_downsample_stages = 3\n").is_err());
        assert!(Config::from_toml("[codec]\nresidual_centroids = 30\n").is_err());
        assert!(Config::from_toml("[loss]\nlambda_mel = -1.0\n").is_err());
        assert!(Config::from_toml("[codec]\nbogus = 1\n").is_err());
    }
}
