//! Two-part convolutional decoder.
//!
//! Part 1 climbs the feature pyramid back to the input resolution with
//! concatenated skips. Part 2 repeatedly doubles that map to reach the
//! requested output scale and projects to class logits.

use candle_core::{Module, ModuleT, Tensor};
use candle_nn::{Conv2d, VarBuilder};

use super::config::SSegConfig;
use super::encoder::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{conv1x1, upsample2x, DoubleConv};

#[derive(Debug, Clone)]
pub struct DecoderPart1 {
    /// `levels[l]` fuses the upsampled level `l + 1` with skip `l`.
    levels: Vec<DoubleConv>,
    input: DoubleConv,
    patch_doublings: usize,
    use_skips: bool,
    stage_channels: Vec<usize>,
}

impl DecoderPart1 {
    pub fn new(cfg: &SSegConfig, vb: VarBuilder) -> Result<Self> {
        let enc = &cfg.encoder;
        let stages = enc.num_stages();
        let stage_channels: Vec<usize> = (0..stages).map(|s| enc.stage_channels(s)).collect();
        let levels = (0..stages - 1)
            .map(|l| {
                DoubleConv::new(
                    stage_channels[l + 1] + stage_channels[l],
                    stage_channels[l],
                    vb.pp(format!("levels.{l}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let input = DoubleConv::new(
            stage_channels[0] + enc.in_channels,
            cfg.decoder_channels,
            vb.pp("input"),
        )?;
        Ok(Self {
            levels,
            input,
            patch_doublings: enc.patch_size.trailing_zeros() as usize,
            use_skips: cfg.use_skips,
            stage_channels,
        })
    }

    fn skip(&self, t: &Tensor) -> Result<Tensor> {
        if self.use_skips {
            Ok(t.clone())
        } else {
            Ok(t.zeros_like()?)
        }
    }

    /// `image` is the network input; it joins the features once they are
    /// back at its resolution.
    pub fn forward_t(&self, pyr: &FeaturePyramid, image: &Tensor, train: bool) -> Result<Tensor> {
        if pyr.len() != self.stage_channels.len() {
            return Err(Error::Dimension(format!(
                "decoder expects {} pyramid levels, got {}",
                self.stage_channels.len(),
                pyr.len()
            )));
        }
        for (l, t) in pyr.levels.iter().enumerate() {
            if t.dim(1)? != self.stage_channels[l] {
                return Err(Error::Dimension(format!(
                    "level {l} has {} channels, decoder expects {}",
                    t.dim(1)?,
                    self.stage_channels[l]
                )));
            }
        }
        let mut y = pyr.levels[pyr.len() - 1].clone();
        for l in (0..pyr.len() - 1).rev() {
            let up = upsample2x(&y)?;
            y = Tensor::cat(&[up, self.skip(&pyr.levels[l])?], 1)?;
            y = self.levels[l].forward_t(&y, train)?;
        }
        for _ in 0..self.patch_doublings {
            y = upsample2x(&y)?;
        }
        if y.dims()[2..] != image.dims()[2..] {
            return Err(Error::Dimension(format!(
                "decoded map {:?} does not reach input resolution {:?}",
                &y.dims()[2..],
                &image.dims()[2..]
            )));
        }
        let y = Tensor::cat(&[y, image.clone()], 1)?;
        Ok(self.input.forward_t(&y, train)?)
    }
}

/// Channel count after each upsampling block: halves, never below `floor`.
pub fn part2_channels(start: usize, floor: usize, blocks: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(blocks);
    let mut c = start;
    for _ in 0..blocks {
        c = (c / 2).max(floor);
        out.push(c);
    }
    out
}

#[derive(Debug, Clone)]
pub struct DecoderPart2 {
    blocks: Vec<DoubleConv>,
    head: Conv2d,
}

impl DecoderPart2 {
    pub fn new(cfg: &SSegConfig, vb: VarBuilder) -> Result<Self> {
        let n = cfg.scale.trailing_zeros() as usize;
        let widths = part2_channels(cfg.decoder_channels, cfg.min_decoder_channels, n);
        let mut blocks = Vec::with_capacity(n);
        let mut c_in = cfg.decoder_channels;
        for (i, &c) in widths.iter().enumerate() {
            blocks.push(DoubleConv::new(c_in, c, vb.pp(format!("blocks.{i}")))?);
            c_in = c;
        }
        Ok(Self {
            blocks,
            head: conv1x1(c_in, cfg.num_classes, vb.pp("head"))?,
        })
    }

    pub fn num_upsample_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward_t(&self, fmap: &Tensor, train: bool) -> Result<Tensor> {
        let mut y = fmap.clone();
        for block in &self.blocks {
            y = block.forward_t(&upsample2x(&y)?, train)?;
        }
        Ok(self.head.forward(&y)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_schedule_halves_with_floor() {
        assert_eq!(part2_channels(32, 8, 3), vec![16, 8, 8]);
        assert!(part2_channels(32, 8, 0).is_empty());
    }
}
