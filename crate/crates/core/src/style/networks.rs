//! Generators, patch discriminators and the compact segmentor.

use candle_core::{Module, ModuleT, Tensor};
use candle_nn::ops::leaky_relu;
use candle_nn::{conv2d, group_norm, Conv2d, Conv2dConfig, GroupNorm, VarBuilder};

use crate::error::Result;
use crate::nn::{conv1x1, conv3x3, upsample2x, DoubleConv};

fn conv(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding,
        stride,
        ..Default::default()
    };
    Ok(conv2d(in_c, out_c, k, cfg, vb)?)
}

/// Per-sample, per-channel normalization with a learned affine.
fn instance_norm(c: usize, vb: VarBuilder) -> Result<GroupNorm> {
    Ok(group_norm(c, c, 1e-5, vb)?)
}

#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvNorm {
    fn new(conv: Conv2d, c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            conv,
            norm: instance_norm(c, vb)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: ConvNorm,
    b: ConvNorm,
}

impl ResBlock {
    fn new(c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            a: ConvNorm::new(conv3x3(c, c, vb.pp("conv1"))?, c, vb.pp("norm1"))?,
            b: ConvNorm::new(conv3x3(c, c, vb.pp("conv2"))?, c, vb.pp("norm2"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.b.forward(&self.a.forward(x)?.relu()?)?;
        Ok((x + y)?)
    }
}

/// Residual image-to-image translator. Maps `(N, 1, H, W)` in `[−1, 1]` to
/// the same shape and range; `H` and `W` must be divisible by 4.
#[derive(Debug, Clone)]
pub struct ResnetGenerator {
    stem: ConvNorm,
    down: Vec<ConvNorm>,
    blocks: Vec<ResBlock>,
    up: Vec<ConvNorm>,
    out: Conv2d,
}

impl ResnetGenerator {
    pub fn new(ngf: usize, n_blocks: usize, vb: VarBuilder) -> Result<Self> {
        let stem = ConvNorm::new(conv(1, ngf, 7, 1, 3, vb.pp("stem.conv"))?, ngf, vb.pp("stem.norm"))?;
        let down = (0..2)
            .map(|i| {
                let (a, b) = (ngf << i, ngf << (i + 1));
                ConvNorm::new(
                    conv(a, b, 3, 2, 1, vb.pp(format!("down.{i}.conv")))?,
                    b,
                    vb.pp(format!("down.{i}.norm")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..n_blocks)
            .map(|i| ResBlock::new(ngf * 4, vb.pp(format!("blocks.{i}"))))
            .collect::<Result<Vec<_>>>()?;
        let up = (0..2)
            .map(|i| {
                let (a, b) = (ngf << (2 - i), ngf << (1 - i));
                ConvNorm::new(
                    conv3x3(a, b, vb.pp(format!("up.{i}.conv")))?,
                    b,
                    vb.pp(format!("up.{i}.norm")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stem,
            down,
            blocks,
            up,
            out: conv(ngf, 1, 7, 1, 3, vb.pp("out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.stem.forward(x)?.relu()?;
        for d in &self.down {
            y = d.forward(&y)?.relu()?;
        }
        for b in &self.blocks {
            y = b.forward(&y)?;
        }
        for u in &self.up {
            y = u.forward(&upsample2x(&y)?)?.relu()?;
        }
        Ok(self.out.forward(&y)?.tanh()?)
    }
}

/// Three-layer patch discriminator returning a map of real/fake scores.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    first: Conv2d,
    mid: Vec<ConvNorm>,
    last: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(ndf: usize, vb: VarBuilder) -> Result<Self> {
        let first = conv(1, ndf, 4, 2, 1, vb.pp("conv0"))?;
        let mid = vec![
            ConvNorm::new(conv(ndf, ndf * 2, 4, 2, 1, vb.pp("conv1"))?, ndf * 2, vb.pp("norm1"))?,
            ConvNorm::new(conv(ndf * 2, ndf * 4, 4, 1, 1, vb.pp("conv2"))?, ndf * 4, vb.pp("norm2"))?,
        ];
        Ok(Self {
            first,
            mid,
            last: conv(ndf * 4, 1, 4, 1, 1, vb.pp("out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = leaky_relu(&self.first.forward(x)?, 0.2)?;
        for m in &self.mid {
            y = leaky_relu(&m.forward(&y)?, 0.2)?;
        }
        Ok(self.last.forward(&y)?)
    }
}

/// Compact three-level U-shaped segmentation network returning logits.
#[derive(Debug, Clone)]
pub struct Segmentor {
    enc: Vec<DoubleConv>,
    dec: Vec<DoubleConv>,
    head: Conv2d,
}

impl Segmentor {
    pub fn new(base: usize, num_classes: usize, vb: VarBuilder) -> Result<Self> {
        let enc = vec![
            DoubleConv::new(1, base, vb.pp("enc.0"))?,
            DoubleConv::new(base, base * 2, vb.pp("enc.1"))?,
            DoubleConv::new(base * 2, base * 4, vb.pp("enc.2"))?,
        ];
        let dec = vec![
            DoubleConv::new(base * 6, base * 2, vb.pp("dec.0"))?,
            DoubleConv::new(base * 3, base, vb.pp("dec.1"))?,
        ];
        Ok(Self {
            enc,
            dec,
            head: conv1x1(base, num_classes, vb.pp("head"))?,
        })
    }

    /// `(N, 1, H, W)` images in `[0, 1]` → `(N, C, H, W)` logits. `H` and `W`
    /// must be divisible by 4.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let e0 = self.enc[0].forward_t(x, train)?;
        let e1 = self.enc[1].forward_t(&e0.max_pool2d(2)?, train)?;
        let e2 = self.enc[2].forward_t(&e1.max_pool2d(2)?, train)?;
        let d0 = self.dec[0].forward_t(&Tensor::cat(&[upsample2x(&e2)?, e1], 1)?, train)?;
        let d1 = self.dec[1].forward_t(&Tensor::cat(&[upsample2x(&d0)?, e0], 1)?, train)?;
        Ok(self.head.forward(&d1)?)
    }

    /// Eval-mode class probabilities.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax(&self.forward_t(x, false)?, 1)?)
    }
}
