//! Hierarchical windowed-attention encoder (shifted windows, relative
//! position bias, patch merging between stages).

use candle_core::{DType, Device, IndexOp, Module, Tensor, D};
use candle_nn::ops::softmax_last_dim;
use candle_nn::{conv2d, layer_norm, linear, linear_no_bias, Conv2d, Conv2dConfig, LayerNorm, Linear, VarBuilder};

use super::config::EncoderConfig;
use crate::error::Result;

const LN_EPS: f64 = 1e-5;

/// Relative-position lookup for a `w × w` window: `(w², w²)` flattened.
fn relative_position_index(w: usize) -> Vec<u32> {
    let n = w * w;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / w, i % w);
        for j in 0..n {
            let (yj, xj) = (j / w, j % w);
            let dy = yi + w - 1 - yj;
            let dx = xi + w - 1 - xj;
            idx.push((dy * (2 * w - 1) + dx) as u32);
        }
    }
    idx
}

/// Region labels for the shifted-window mask: `(h, w)` grid split into the
/// nine zones created by a cyclic shift of `shift`.
fn shift_regions(h: usize, w: usize, window: usize, shift: usize) -> Vec<u32> {
    let zone = |v: usize, len: usize| -> u32 {
        if v < len - window {
            0
        } else if v < len - shift {
            1
        } else {
            2
        }
    };
    (0..h * w)
        .map(|i| zone(i / w, h) * 3 + zone(i % w, w))
        .collect()
}

/// Additive attention mask `(num_windows, w², w²)`: 0 within a region,
/// −100 across regions.
fn shifted_window_mask(
    h: usize,
    w: usize,
    window: usize,
    shift: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let regions = shift_regions(h, w, window, shift);
    let (nh, nw) = (h / window, w / window);
    let t = window * window;
    let mut data = Vec::with_capacity(nh * nw * t * t);
    for wy in 0..nh {
        for wx in 0..nw {
            let ids: Vec<u32> = (0..t)
                .map(|k| regions[(wy * window + k / window) * w + wx * window + k % window])
                .collect();
            for a in &ids {
                for b in &ids {
                    data.push(if a == b { 0f32 } else { -100.0 });
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (nh * nw, t, t), device)?.to_dtype(dtype)?)
}

/// `(N, H, W, C)` → `(N·nW, w², C)`.
fn window_partition(x: &Tensor, window: usize) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    Ok(x.reshape((n, h / window, window, w / window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((n * (h / window) * (w / window), window * window, c))?)
}

fn window_reverse(x: &Tensor, window: usize, n: usize, h: usize, w: usize) -> Result<Tensor> {
    let c = x.dim(D::Minus1)?;
    Ok(x.reshape((n, h / window, w / window, window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((n, h, w, c))?)
}

#[derive(Debug, Clone)]
struct WindowAttention {
    qkv: Linear,
    proj: Linear,
    bias_table: Tensor,
    bias_index: Tensor,
    heads: usize,
    window: usize,
}

impl WindowAttention {
    fn new(dim: usize, heads: usize, window: usize, vb: VarBuilder) -> Result<Self> {
        let bias_table = vb.get_with_hints(
            ((2 * window - 1) * (2 * window - 1), heads),
            "relative_position_bias_table",
            candle_nn::Init::Randn {
                mean: 0.0,
                stdev: 0.02,
            },
        )?;
        let idx = relative_position_index(window);
        let n = idx.len();
        Ok(Self {
            qkv: linear(dim, 3 * dim, vb.pp("qkv"))?,
            proj: linear(dim, dim, vb.pp("proj"))?,
            bias_table,
            bias_index: Tensor::from_vec(idx, n, vb.device())?,
            heads,
            window,
        })
    }

    fn relative_bias(&self) -> Result<Tensor> {
        let t = self.window * self.window;
        Ok(self
            .bias_table
            .index_select(&self.bias_index, 0)?
            .reshape((t, t, self.heads))?
            .permute((2, 0, 1))?
            .unsqueeze(0)?)
    }

    /// `x`: `(B, w², C)`; `mask`: `(nW, w², w²)` with `B` a multiple of `nW`.
    fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        let hd = c / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = (qkv.i(0)?.contiguous()? * (hd as f64).powf(-0.5))?;
        let k = qkv.i(1)?.contiguous()?;
        let v = qkv.i(2)?.contiguous()?;
        let mut attn = q.matmul(&k.t()?)?.broadcast_add(&self.relative_bias()?)?;
        if let Some(mask) = mask {
            let nw = mask.dim(0)?;
            attn = attn
                .reshape((b / nw, nw, self.heads, t, t))?
                .broadcast_add(&mask.unsqueeze(1)?.unsqueeze(0)?)?
                .reshape((b, self.heads, t, t))?;
        }
        let out = softmax_last_dim(&attn)?
            .matmul(&v)?
            .transpose(1, 2)?
            .reshape((b, t, c))?;
        Ok(self.proj.forward(&out)?)
    }
}

#[derive(Debug, Clone)]
struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    window: usize,
    shifted: bool,
}

impl SwinBlock {
    fn new(
        dim: usize,
        heads: usize,
        window: usize,
        shifted: bool,
        mlp_ratio: f64,
        vb: VarBuilder,
    ) -> Result<Self> {
        let hidden = ((dim as f64) * mlp_ratio).round().max(1.0) as usize;
        Ok(Self {
            norm1: layer_norm(dim, LN_EPS, vb.pp("norm1"))?,
            attn: WindowAttention::new(dim, heads, window, vb.pp("attn"))?,
            norm2: layer_norm(dim, LN_EPS, vb.pp("norm2"))?,
            fc1: linear(dim, hidden, vb.pp("mlp.fc1"))?,
            fc2: linear(hidden, dim, vb.pp("mlp.fc2"))?,
            window,
            shifted,
        })
    }

    /// `x`: `(N, H, W, C)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        if h % self.window != 0 || w % self.window != 0 {
            return Err(crate::Error::Dimension(format!(
                "feature map {h}x{w} is not divisible by window {}",
                self.window
            )));
        }
        let shift = if self.shifted && h.min(w) > self.window {
            self.window / 2
        } else {
            0
        };
        let shortcut = x;
        let mut y = self.norm1.forward(x)?;
        if shift > 0 {
            y = y.roll(-(shift as i32), 1)?.roll(-(shift as i32), 2)?;
        }
        let windows = window_partition(&y, self.window)?;
        let mask = if shift > 0 {
            Some(shifted_window_mask(h, w, self.window, shift, x.dtype(), x.device())?)
        } else {
            None
        };
        let attended = self.attn.forward(&windows, mask.as_ref())?;
        let mut y = window_reverse(&attended, self.window, n, h, w)?;
        if shift > 0 {
            y = y.roll(shift as i32, 1)?.roll(shift as i32, 2)?;
        }
        let x = (shortcut + y)?;
        let mlp = self
            .fc2
            .forward(&self.fc1.forward(&self.norm2.forward(&x)?)?.gelu_erf()?)?;
        debug_assert_eq!(mlp.dim(3)?, c);
        Ok((x + mlp)?)
    }
}

/// Concatenates 2×2 neighbourhoods and projects `4C → 2C`.
#[derive(Debug, Clone)]
struct PatchMerging {
    norm: LayerNorm,
    reduction: Linear,
}

impl PatchMerging {
    fn new(dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            norm: layer_norm(4 * dim, LN_EPS, vb.pp("norm"))?,
            reduction: linear_no_bias(4 * dim, 2 * dim, vb.pp("reduction"))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, c) = x.dims4()?;
        let x = x
            .reshape((n, h / 2, 2, w / 2, 2, c))?
            .permute((0, 1, 3, 4, 2, 5))?
            .contiguous()?
            .reshape((n, h / 2, w / 2, 4 * c))?;
        Ok(self.reduction.forward(&self.norm.forward(&x)?)?)
    }
}

#[derive(Debug, Clone)]
struct SwinStage {
    downsample: Option<PatchMerging>,
    blocks: Vec<SwinBlock>,
    norm: LayerNorm,
}

/// Windowed-attention encoder producing one feature map per stage.
#[derive(Debug, Clone)]
pub struct SwinEncoder {
    patch_embed: Conv2d,
    embed_norm: LayerNorm,
    stages: Vec<SwinStage>,
}

impl SwinEncoder {
    pub fn new(cfg: &EncoderConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let patch_embed = conv2d(
            cfg.in_channels,
            cfg.embed_dim,
            cfg.patch_size,
            Conv2dConfig {
                stride: cfg.patch_size,
                ..Default::default()
            },
            vb.pp("patch_embed.proj"),
        )?;
        let embed_norm = layer_norm(cfg.embed_dim, LN_EPS, vb.pp("patch_embed.norm"))?;
        let mut stages = Vec::with_capacity(cfg.num_stages());
        for s in 0..cfg.num_stages() {
            let svb = vb.pp(format!("stages.{s}"));
            let dim = cfg.stage_channels(s);
            let downsample = if s > 0 {
                Some(PatchMerging::new(cfg.stage_channels(s - 1), svb.pp("downsample"))?)
            } else {
                None
            };
            let window = cfg.stage_window(s);
            let blocks = (0..cfg.depths[s])
                .map(|i| {
                    SwinBlock::new(
                        dim,
                        cfg.num_heads[s],
                        window,
                        i % 2 == 1,
                        cfg.mlp_ratio,
                        svb.pp(format!("blocks.{i}")),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(SwinStage {
                downsample,
                blocks,
                norm: layer_norm(dim, LN_EPS, svb.pp("norm"))?,
            });
        }
        Ok(Self {
            patch_embed,
            embed_norm,
            stages,
        })
    }

    /// `x`: `(N, C_in, H, W)`; returns `(N, C_s, H_s, W_s)` per stage.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tokens = self
            .embed_norm
            .forward(&self.patch_embed.forward(x)?.permute((0, 2, 3, 1))?)?;
        let mut outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(ds) = &stage.downsample {
                tokens = ds.forward(&tokens)?;
            }
            for block in &stage.blocks {
                tokens = block.forward(&tokens)?;
            }
            let out = stage.norm.forward(&tokens)?;
            outputs.push(out.permute((0, 3, 1, 2))?.contiguous()?);
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_index_range() {
        let idx = relative_position_index(3);
        assert_eq!(idx.len(), 81);
        assert_eq!(*idx.iter().max().unwrap(), 24);
        // Diagonal entries all map to the zero offset.
        for i in 0..9 {
            assert_eq!(idx[i * 9 + i], 12);
        }
    }

    #[test]
    fn shift_mask_blocks_cross_region_attention() {
        let m = shifted_window_mask(8, 8, 4, 2, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(m.dims(), &[4, 16, 16]);
        let first = m.i(0).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(first.iter().all(|&v| v == 0.0));
        let last = m.i(3).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(last.iter().any(|&v| v == -100.0));
    }

    #[test]
    fn partition_round_trip() {
        let x = Tensor::arange(0f32, 2. * 8. * 8. * 3., &Device::Cpu)
            .unwrap()
            .reshape((2, 8, 8, 3))
            .unwrap();
        let p = window_partition(&x, 4).unwrap();
        assert_eq!(p.dims(), &[8, 16, 3]);
        let back = window_reverse(&p, 4, 2, 8, 8).unwrap();
        let diff = (back - x).unwrap().abs().unwrap().sum_all().unwrap();
        assert_eq!(diff.to_scalar::<f32>().unwrap(), 0.0);
    }
}
