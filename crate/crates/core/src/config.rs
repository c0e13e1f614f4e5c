//! Flat TOML training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MODEL_RATE;
use crate::degrade::{CutoffDistribution, GainRange, NoiseSpec};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::LossWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub corpus_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub checkpoint_every: usize,

    pub batch_size: usize,
    pub segment_seconds: f64,
    pub stage1_steps: usize,
    pub stage1_lr: f64,
    pub stage2_steps: usize,
    pub stage2_g_lr: f64,
    pub stage2_d_lr: f64,
    pub d_updates_per_g: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,

    pub alpha: f64,
    pub stft_resolutions: Vec<usize>,

    pub cutoff_mean_hz: f64,
    pub cutoff_std_hz: f64,
    pub cutoff_clamp_low_hz: f64,
    pub cutoff_clamp_high_hz: f64,
    pub noise_power_dbfs: f64,
    pub noise_enabled: bool,
    pub gain_low_db: f64,
    pub gain_high_db: f64,

    pub gen_depth: usize,
    pub gen_base_channels: usize,
    pub gen_dense_block_layers: usize,
    pub gen_growth_rate: usize,
    pub gen_freq_embedding_dims: usize,
    pub gen_head_init_gain: f64,

    pub disc_layers: usize,
    pub disc_base_channels: usize,
    pub disc_max_channels: usize,
    pub disc_group_size: usize,
    pub disc_leaky_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let cutoff = CutoffDistribution::default();
        let noise = NoiseSpec::default();
        let gain = GainRange::default();
        let gen = GeneratorConfig::default();
        let disc = DiscriminatorConfig::default();
        let loss = LossWeights::default();
        Self {
            seed: 0,
            corpus_dir: None,
            output_dir: PathBuf::from("runs"),
            checkpoint_every: 1000,
            batch_size: 4,
            segment_seconds: 5.0,
            stage1_steps: 10_000,
            stage1_lr: 1e-4,
            stage2_steps: 300_000,
            stage2_g_lr: 1e-5,
            stage2_d_lr: 1e-4,
            d_updates_per_g: 2,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            alpha: loss.alpha,
            stft_resolutions: loss.stft_resolutions,
            cutoff_mean_hz: cutoff.mean_hz,
            cutoff_std_hz: cutoff.std_hz,
            cutoff_clamp_low_hz: cutoff.clamp_low_hz,
            cutoff_clamp_high_hz: cutoff.clamp_high_hz,
            noise_power_dbfs: noise.power_dbfs,
            noise_enabled: noise.enabled,
            gain_low_db: gain.low_db,
            gain_high_db: gain.high_db,
            gen_depth: gen.depth,
            gen_base_channels: gen.base_channels,
            gen_dense_block_layers: gen.dense_block_layers,
            gen_growth_rate: gen.growth_rate,
            gen_freq_embedding_dims: gen.freq_embedding_dims,
            gen_head_init_gain: gen.head_init_gain,
            disc_layers: disc.layers_per_disc,
            disc_base_channels: disc.base_channels,
            disc_max_channels: disc.max_channels,
            disc_group_size: disc.group_size,
            disc_leaky_slope: disc.leaky_slope,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            depth: self.gen_depth,
            base_channels: self.gen_base_channels,
            dense_block_layers: self.gen_dense_block_layers,
            growth_rate: self.gen_growth_rate,
            freq_embedding_dims: self.gen_freq_embedding_dims,
            head_init_gain: self.gen_head_init_gain,
            ..GeneratorConfig::default()
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            layers_per_disc: self.disc_layers,
            base_channels: self.disc_base_channels,
            max_channels: self.disc_max_channels,
            group_size: self.disc_group_size,
            leaky_slope: self.disc_leaky_slope,
            ..DiscriminatorConfig::default()
        }
    }

    pub fn cutoff(&self) -> CutoffDistribution {
        CutoffDistribution {
            mean_hz: self.cutoff_mean_hz,
            std_hz: self.cutoff_std_hz,
            clamp_low_hz: self.cutoff_clamp_low_hz,
            clamp_high_hz: self.cutoff_clamp_high_hz,
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            power_dbfs: self.noise_power_dbfs,
            enabled: self.noise_enabled,
        }
    }

    pub fn gain(&self) -> GainRange {
        GainRange {
            low_db: self.gain_low_db,
            high_db: self.gain_high_db,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            stft_resolutions: self.stft_resolutions.clone(),
        }
    }

    pub fn segment_len(&self) -> usize {
        (self.segment_seconds * MODEL_RATE as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.d_updates_per_g == 0 || self.checkpoint_every == 0 {
            return bad("batch_size, d_updates_per_g and checkpoint_every must be positive");
        }
        if !(self.segment_seconds > 0.0 && self.segment_seconds.is_finite()) {
            return bad("segment_seconds must be positive");
        }
        for (name, lr) in [
            ("stage1_lr", self.stage1_lr),
            ("stage2_g_lr", self.stage2_g_lr),
            ("stage2_d_lr", self.stage2_d_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.gain_low_db > self.gain_high_db {
            return bad("gain_low_db exceeds gain_high_db");
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.loss_weights().validate().map_err(wrap)?;
        self.cutoff().validate(MODEL_RATE).map_err(wrap)?;
        self.noise().validate().map_err(wrap)?;
        self.generator().validate().map_err(wrap)?;
        self.discriminator().validate().map_err(wrap)?;
        let rf = self.discriminator().receptive_field();
        if self.segment_len() / 4 < rf {
            return Err(Error::Config(format!(
                "segments of {} samples are too short for the discriminator receptive field {rf} at quarter rate",
                self.segment_len()
            )));
        }
        Ok(())
    }
}
