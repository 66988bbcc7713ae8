//! Flat run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PhantomParams;
use crate::error::{Error, Result};
use crate::nn::OptimConfig;
use crate::sseg::{Backbone, EncoderConfig, SSegConfig};
use crate::ssl::{AugmentConfig, LossWeights, SslConfig};
use crate::style::{SegPretrainConfig, StyleConfig};

/// File name of the resolved configuration written into every run directory.
pub const RESOLVED_CONFIG_FILE: &str = "run_config.resolved";

/// Every tunable of the toolkit as one flat TOML table. Unknown keys are
/// rejected; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Only `cpu` is supported.
    pub device: String,
    /// Dataset root holding `index.json`.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,

    pub synth_count: usize,
    pub synth_resolution: usize,
    pub synth_hr_scale: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub phantom_center_jitter: f32,
    pub phantom_outer_radius: (f32, f32),
    pub phantom_thickness: (f32, f32),
    pub phantom_lesion_count: (usize, usize),
    pub phantom_lesion_radius: (f32, f32),
    pub phantom_lesion_fraction: (f64, f64),

    pub backbone: Backbone,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub window_size: usize,
    pub mlp_ratio: f64,
    pub input_resolution: usize,
    pub scale: usize,
    pub num_classes: usize,
    pub decoder_channels: usize,
    pub min_decoder_channels: usize,
    pub use_skips: bool,

    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,

    pub ssl_steps: usize,
    pub mask_rate: f64,
    pub mask_patch_size: usize,
    pub mask_fill: f32,
    pub lambda_rot: f64,
    pub lambda_mim: f64,
    pub lambda_cl: f64,
    pub temperature: f64,
    pub projection_dim: usize,
    pub mim_masked_only: bool,

    pub sseg_steps: usize,
    /// `scratch`, or a path to a pretraining archive.
    pub sseg_init: String,
    /// Domain of the training images: `lge`, `dti` or `all`.
    pub sseg_domain: String,
    pub val_every: usize,

    pub style_resolution: usize,
    pub ngf: usize,
    pub n_blocks: usize,
    pub ndf: usize,
    pub seg_base_channels: usize,
    pub lambda_cyc: f64,
    pub lambda_seg: f64,
    pub style_steps: usize,
    pub style_lr: f64,
    pub style_beta1: f64,
    pub seg_lr: f64,
    pub seg_max_steps: usize,
    pub seg_eval_every: usize,
    pub seg_patience: usize,

    /// Continue from this archive's weights and step counter.
    pub resume: String,
    /// Accept archives whose config fingerprint differs.
    pub force: bool,
    pub log_every: usize,

    /// `name:spec` entries; see the eval command.
    pub eval_pipelines: Vec<String>,
    pub eval_seeds: Vec<u64>,
    /// Domain of the evaluated images: `dti`, `lge` or `all`.
    pub eval_domain: String,
    /// Split evaluated: `train`, `val`, `test` or `all`.
    pub eval_split: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phantom = PhantomParams::default();
        let enc = EncoderConfig::default();
        let sseg = SSegConfig::default();
        let optim = OptimConfig::default();
        let ssl = SslConfig::default();
        let style = StyleConfig::default();
        let seg = SegPretrainConfig::default();
        Self {
            seed: 0,
            device: "cpu".into(),
            dataset: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            synth_count: 16,
            synth_resolution: phantom.resolution,
            synth_hr_scale: 8,
            split_train: 0.7,
            split_val: 0.15,
            phantom_center_jitter: phantom.center_jitter,
            phantom_outer_radius: phantom.outer_radius,
            phantom_thickness: phantom.thickness,
            phantom_lesion_count: phantom.lesion_count,
            phantom_lesion_radius: phantom.lesion_radius,
            phantom_lesion_fraction: phantom.lesion_fraction,
            backbone: enc.backbone,
            patch_size: enc.patch_size,
            embed_dim: enc.embed_dim,
            depths: enc.depths,
            num_heads: enc.num_heads,
            window_size: enc.window_size,
            mlp_ratio: enc.mlp_ratio,
            input_resolution: enc.input_resolution,
            scale: sseg.scale,
            num_classes: sseg.num_classes,
            decoder_channels: sseg.decoder_channels,
            min_decoder_channels: sseg.min_decoder_channels,
            use_skips: sseg.use_skips,
            lr: optim.lr,
            weight_decay: optim.weight_decay,
            beta1: optim.beta1,
            beta2: optim.beta2,
            batch_size: 24,
            ssl_steps: 200,
            mask_rate: ssl.augment.mask_rate,
            mask_patch_size: ssl.augment.patch_size,
            mask_fill: ssl.augment.fill,
            lambda_rot: ssl.weights.rotation,
            lambda_mim: ssl.weights.mim,
            lambda_cl: ssl.weights.contrastive,
            temperature: ssl.temperature,
            projection_dim: ssl.projection_dim,
            mim_masked_only: ssl.mim_masked_only,
            sseg_steps: 500,
            sseg_init: "scratch".into(),
            sseg_domain: "lge".into(),
            val_every: 50,
            style_resolution: style.resolution,
            ngf: style.ngf,
            n_blocks: style.n_blocks,
            ndf: style.ndf,
            seg_base_channels: style.seg_base_channels,
            lambda_cyc: style.lambda_cyc,
            lambda_seg: style.lambda_seg,
            style_steps: 2000,
            style_lr: optim.lr,
            style_beta1: optim.beta1,
            seg_lr: seg.optim.lr,
            seg_max_steps: seg.max_steps,
            seg_eval_every: seg.eval_every,
            seg_patience: seg.patience,
            resume: String::new(),
            force: false,
            log_every: 10,
            eval_pipelines: vec!["oracle:oracle".into()],
            eval_seeds: vec![0],
            eval_domain: "dti".into(),
            eval_split: "test".into(),
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::load(path, e))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value` overrides in order.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            if !table.contains_key(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            table.insert(key.to_string(), parse_value(raw.trim()));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.device != "cpu" {
            return Err(Error::Config(format!("unsupported device `{}`", self.device)));
        }
        if !(0.0..=1.0).contains(&self.split_train)
            || !(0.0..=1.0).contains(&self.split_val)
            || self.split_train + self.split_val > 1.0
        {
            return Err(Error::Config("split fractions must lie in [0, 1] and sum to at most 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        crate::sseg::config::validate_scale(self.synth_hr_scale)?;
        self.sseg_config().validate()?;
        self.style_config().validate()?;
        self.phantom_params().validate()?;
        Ok(())
    }

    pub fn phantom_params(&self) -> PhantomParams {
        PhantomParams {
            resolution: self.synth_resolution,
            center_jitter: self.phantom_center_jitter,
            outer_radius: self.phantom_outer_radius,
            thickness: self.phantom_thickness,
            lesion_count: self.phantom_lesion_count,
            lesion_radius: self.phantom_lesion_radius,
            lesion_fraction: self.phantom_lesion_fraction,
            ..PhantomParams::default()
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            backbone: self.backbone,
            in_channels: 1,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            depths: self.depths.clone(),
            num_heads: self.num_heads.clone(),
            window_size: self.window_size,
            mlp_ratio: self.mlp_ratio,
            input_resolution: self.input_resolution,
        }
    }

    pub fn sseg_config(&self) -> SSegConfig {
        SSegConfig {
            encoder: self.encoder_config(),
            scale: self.scale,
            num_classes: self.num_classes,
            decoder_channels: self.decoder_channels,
            min_decoder_channels: self.min_decoder_channels,
            use_skips: self.use_skips,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: OptimConfig::default().eps,
        }
    }

    pub fn ssl_config(&self) -> SslConfig {
        SslConfig {
            augment: AugmentConfig {
                mask_rate: self.mask_rate,
                patch_size: self.mask_patch_size,
                fill: self.mask_fill,
            },
            weights: LossWeights {
                rotation: self.lambda_rot,
                mim: self.lambda_mim,
                contrastive: self.lambda_cl,
            },
            temperature: self.temperature,
            projection_dim: self.projection_dim,
            mim_masked_only: self.mim_masked_only,
        }
    }

    pub fn style_config(&self) -> StyleConfig {
        StyleConfig {
            resolution: self.style_resolution,
            ngf: self.ngf,
            n_blocks: self.n_blocks,
            ndf: self.ndf,
            seg_base_channels: self.seg_base_channels,
            num_classes: self.num_classes,
            lambda_cyc: self.lambda_cyc,
            lambda_seg: self.lambda_seg,
        }
    }

    pub fn style_optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.style_lr,
            beta1: self.style_beta1,
            ..self.optim()
        }
    }

    pub fn seg_pretrain_config(&self) -> SegPretrainConfig {
        SegPretrainConfig {
            max_steps: self.seg_max_steps,
            batch_size: self.batch_size,
            eval_every: self.seg_eval_every,
            patience: self.seg_patience,
            min_delta: SegPretrainConfig::default().min_delta,
            optim: self.optim().with_lr(self.seg_lr),
            seed: self.seed,
        }
    }
}
