//! Building blocks shared by the networks.

use candle_core::{DType, Module, ModuleT, Tensor, Var, D};
use candle_nn::{
    batch_norm, conv2d, AdamW, BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, Optimizer, ParamsAdamW,
    VarBuilder,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }

    pub fn build(&self, vars: Vec<Var>) -> Result<AdamW> {
        Ok(AdamW::new(
            vars,
            ParamsAdamW {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                weight_decay: self.weight_decay,
            },
        )?)
    }
}

/// Reads a scalar tensor of any float dtype as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// 2× bilinear upsampling of an `(N, C, H, W)` tensor with half-pixel centres
/// and edge clamping (`align_corners = false`).
///
/// Built from slices and affine combinations so it is differentiable.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let x = upsample2x_dim(x, 2)?;
    upsample2x_dim(&x, 3)
}

fn upsample2x_dim(x: &Tensor, dim: usize) -> Result<Tensor> {
    let len = x.dim(dim)?;
    let padded = x.pad_with_same(dim, 1, 1)?;
    let prev = padded.narrow(dim, 0, len)?;
    let cur = padded.narrow(dim, 1, len)?;
    let next = padded.narrow(dim, 2, len)?;
    let even = ((prev * 0.25)? + (&cur * 0.75)?)?;
    let odd = ((cur * 0.75)? + (next * 0.25)?)?;
    let stacked = Tensor::stack(&[even, odd], dim + 1)?;
    let mut dims = x.dims().to_vec();
    dims[dim] *= 2;
    Ok(stacked.reshape(dims)?)
}

/// `(out, in)` matrix of half-pixel bilinear weights.
pub fn interpolation_matrix(in_len: usize, out_len: usize) -> Vec<f32> {
    let mut m = vec![0f32; out_len * in_len];
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = (src - i0 as f64) as f32;
        m[o * in_len + i0] += 1.0 - frac;
        m[o * in_len + i1] += frac;
    }
    m
}

/// Bilinear resize of `(N, C, H, W)` to any size, as two matrix products.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let dev = x.device();
    let rows = Tensor::from_vec(interpolation_matrix(h, height), (height, h), dev)?
        .to_dtype(x.dtype())?;
    let cols_t = Tensor::from_vec(interpolation_matrix(w, width), (width, w), dev)?
        .to_dtype(x.dtype())?
        .t()?;
    let y = x.broadcast_matmul(&cols_t)?;
    Ok(rows.broadcast_matmul(&y)?)
}

/// `(N, C·r², H, W)` → `(N, C, H·r, W·r)`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let oc = c / (r * r);
    Ok(x.reshape((n, oc, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((n, oc, h * r, w * r))?)
}

/// Mean over the spatial axes: `(N, C, H, W)` → `(N, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

pub fn conv3x3(in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: 1,
        ..Default::default()
    };
    Ok(conv2d(in_c, out_c, 3, cfg, vb)?)
}

pub fn conv1x1(in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Conv2d> {
    Ok(conv2d(in_c, out_c, 1, Default::default(), vb)?)
}

fn bn(c: usize, vb: VarBuilder) -> Result<BatchNorm> {
    let cfg = BatchNormConfig {
        eps: 1e-5,
        remove_mean: true,
        affine: true,
        momentum: 0.1,
    };
    Ok(batch_norm(c, cfg, vb)?)
}

/// Two stacks of convolution → ReLU → batch norm.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
}

impl DoubleConv {
    pub fn new(in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            conv1: conv3x3(in_c, out_c, vb.pp("conv1"))?,
            bn1: bn(out_c, vb.pp("bn1"))?,
            conv2: conv3x3(out_c, out_c, vb.pp("conv2"))?,
            bn2: bn(out_c, vb.pp("bn2"))?,
        })
    }
}

impl ModuleT for DoubleConv {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let x = self.conv1.forward(x)?.relu()?.apply_t(&self.bn1, train)?;
        self.conv2.forward(&x)?.relu()?.apply_t(&self.bn2, train)
    }
}
