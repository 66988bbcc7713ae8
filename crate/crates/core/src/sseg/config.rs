use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    WindowedAttention,
    PlainConv,
}

impl std::str::FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed_attention" | "swin" => Ok(Backbone::WindowedAttention),
            "plain_conv" | "conv" => Ok(Backbone::PlainConv),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Encoder hyperparameters. Stage `s` runs at `input / (patch · 2ˢ)` with
/// `embed_dim · 2ˢ` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    pub in_channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub num_heads: Vec<usize>,
    pub window_size: usize,
    pub mlp_ratio: f64,
    pub input_resolution: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::WindowedAttention,
            in_channels: 1,
            patch_size: 2,
            embed_dim: 48,
            depths: vec![2, 2, 2, 2],
            num_heads: vec![3, 6, 12, 24],
            window_size: 8,
            mlp_ratio: 4.0,
            input_resolution: 64,
        }
    }
}

/// Spatial size and channel count of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl EncoderConfig {
    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn stage_resolution(&self, stage: usize) -> usize {
        self.input_resolution / (self.patch_size << stage)
    }

    /// Window actually used at `stage`: windows never exceed the feature map.
    pub fn stage_window(&self, stage: usize) -> usize {
        self.window_size.min(self.stage_resolution(stage))
    }

    /// Shapes for a square input of `input_resolution`.
    pub fn stage_shapes(&self) -> Vec<StageShape> {
        self.stage_shapes_for(self.input_resolution, self.input_resolution)
    }

    pub fn stage_shapes_for(&self, height: usize, width: usize) -> Vec<StageShape> {
        (0..self.num_stages())
            .map(|s| StageShape {
                height: height / (self.patch_size << s),
                width: width / (self.patch_size << s),
                channels: self.stage_channels(s),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.num_stages();
        if stages < 2 {
            return Err(Error::Config(format!("need at least 2 stages, got {stages}")));
        }
        if self.depths.iter().any(|d| *d == 0) {
            return Err(Error::Config("stage depths must be positive".into()));
        }
        if self.patch_size == 0 || !self.patch_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "patch size {} must be a power of two",
                self.patch_size
            )));
        }
        if self.in_channels == 0 || self.embed_dim == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let divisor = self.patch_size << (stages - 1);
        if self.input_resolution == 0 || self.input_resolution % divisor != 0 {
            return Err(Error::Config(format!(
                "input resolution {} is not divisible by patch_size·2^(stages−1) = {divisor}",
                self.input_resolution
            )));
        }
        if self.backbone == Backbone::WindowedAttention {
            if self.num_heads.len() != stages {
                return Err(Error::Config(format!(
                    "{} head counts for {stages} stages",
                    self.num_heads.len()
                )));
            }
            if self.window_size == 0 || self.mlp_ratio <= 0.0 {
                return Err(Error::Config("window size and mlp ratio must be positive".into()));
            }
            for s in 0..stages {
                let c = self.stage_channels(s);
                let heads = self.num_heads[s];
                if heads == 0 || c % heads != 0 {
                    return Err(Error::Config(format!(
                        "stage {s}: {c} channels not divisible by {heads} heads"
                    )));
                }
                if self.stage_resolution(s) % self.stage_window(s) != 0 {
                    return Err(Error::Config(format!(
                        "stage {s}: resolution {} not divisible by window {}",
                        self.stage_resolution(s),
                        self.stage_window(s)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SSegConfig {
    pub encoder: EncoderConfig,
    /// Output resolution multiplier; a power of two.
    pub scale: usize,
    pub num_classes: usize,
    /// Channels of the input-resolution feature map leaving decoder part 1.
    pub decoder_channels: usize,
    /// Floor for the halving channel schedule of decoder part 2.
    pub min_decoder_channels: usize,
    /// Feed encoder features to the decoder; when false zeros take their place.
    pub use_skips: bool,
}

impl Default for SSegConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            scale: 8,
            num_classes: 2,
            decoder_channels: 32,
            min_decoder_channels: 8,
            use_skips: true,
        }
    }
}

impl SSegConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        validate_scale(self.scale)?;
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.decoder_channels == 0 || self.min_decoder_channels == 0 {
            return Err(Error::Config("decoder channels must be positive".into()));
        }
        Ok(())
    }

    pub fn output_resolution(&self) -> usize {
        self.encoder.input_resolution * self.scale
    }
}

pub fn validate_scale(scale: usize) -> Result<()> {
    if scale == 0 || !scale.is_power_of_two() {
        return Err(Error::Config(format!("upsample scale {scale} must be a power of two")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let cfg = EncoderConfig::default();
        cfg.validate().unwrap();
        let shapes: Vec<_> = cfg
            .stage_shapes()
            .iter()
            .map(|s| (s.height, s.channels))
            .collect();
        assert_eq!(shapes, vec![(32, 48), (16, 96), (8, 192), (4, 384)]);
        assert_eq!(cfg.stage_window(0), 8);
        assert_eq!(cfg.stage_window(3), 4);
    }

    #[test]
    fn rejects_indivisible_resolution() {
        let cfg = EncoderConfig {
            input_resolution: 60,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_single_stage() {
        let cfg = EncoderConfig {
            depths: vec![2],
            num_heads: vec![3],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scale_must_be_power_of_two() {
        for s in [1, 2, 4, 8] {
            validate_scale(s).unwrap();
        }
        for s in [0, 3, 6] {
            assert!(validate_scale(s).is_err());
        }
    }
}
