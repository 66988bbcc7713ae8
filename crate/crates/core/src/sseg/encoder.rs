//! Encoder backbones behind a common feature-pyramid contract.

use candle_core::{Module, Tensor};
use candle_nn::{batch_norm, conv2d, BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, VarBuilder};

use super::config::{Backbone, EncoderConfig, StageShape};
use super::swin::SwinEncoder;
use crate::error::{Error, Result};

/// Stage outputs ordered shallow to deep, each `(N, C_s, H_s, W_s)`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn shapes(&self) -> Result<Vec<StageShape>> {
        self.levels
            .iter()
            .map(|t| {
                let (_, c, h, w) = t.dims4()?;
                Ok(StageShape {
                    height: h,
                    width: w,
                    channels: c,
                })
            })
            .collect()
    }

    /// Errors unless every level matches the schedule for an `h × w` input.
    pub fn check_schedule(&self, cfg: &EncoderConfig, h: usize, w: usize) -> Result<()> {
        let expect = cfg.stage_shapes_for(h, w);
        let got = self.shapes()?;
        if expect != got {
            return Err(Error::Dimension(format!(
                "feature pyramid {got:?} does not follow the schedule {expect:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvUnit {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvUnit {
    fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.conv.forward(x)?.apply_t(&self.bn, train)?.relu()?;
        Ok((x + y)?)
    }
}

#[derive(Debug, Clone)]
struct ConvStage {
    down: Conv2d,
    units: Vec<ConvUnit>,
}

/// Strided-convolution backbone with the same shape schedule as the
/// windowed-attention encoder.
#[derive(Debug, Clone)]
pub struct PlainConvEncoder {
    stages: Vec<ConvStage>,
}

impl PlainConvEncoder {
    pub fn new(cfg: &EncoderConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let bn_cfg = BatchNormConfig {
            eps: 1e-5,
            remove_mean: true,
            affine: true,
            momentum: 0.1,
        };
        let mut stages = Vec::with_capacity(cfg.num_stages());
        for s in 0..cfg.num_stages() {
            let svb = vb.pp(format!("stages.{s}"));
            let (in_c, k) = if s == 0 {
                (cfg.in_channels, cfg.patch_size)
            } else {
                (cfg.stage_channels(s - 1), 2)
            };
            let c = cfg.stage_channels(s);
            let down = conv2d(
                in_c,
                c,
                k,
                Conv2dConfig {
                    stride: k,
                    ..Default::default()
                },
                svb.pp("down"),
            )?;
            let units = (0..cfg.depths[s])
                .map(|i| {
                    let uvb = svb.pp(format!("units.{i}"));
                    Ok(ConvUnit {
                        conv: crate::nn::conv3x3(c, c, uvb.pp("conv"))?,
                        bn: batch_norm(c, bn_cfg, uvb.pp("bn"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(ConvStage { down, units });
        }
        Ok(Self { stages })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let mut y = x.clone();
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            y = stage.down.forward(&y)?;
            for unit in &stage.units {
                y = unit.forward_t(&y, train)?;
            }
            out.push(y.clone());
        }
        Ok(out)
    }
}

/// Any supported backbone.
#[derive(Debug, Clone)]
pub enum Encoder {
    WindowedAttention(SwinEncoder),
    PlainConv(PlainConvEncoder),
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, vb: VarBuilder) -> Result<Self> {
        Ok(match cfg.backbone {
            Backbone::WindowedAttention => Encoder::WindowedAttention(SwinEncoder::new(cfg, vb)?),
            Backbone::PlainConv => Encoder::PlainConv(PlainConvEncoder::new(cfg, vb)?),
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let levels = match self {
            Encoder::WindowedAttention(e) => e.forward(x)?,
            Encoder::PlainConv(e) => e.forward_t(x, train)?,
        };
        Ok(FeaturePyramid { levels })
    }
}
