use candle_core::{Module, Tensor};
use candle_nn::{linear, AdamW, Conv2d, Linear, Optimizer, VarBuilder};
use serde::{Deserialize, Serialize};

use super::augment::{augment_view, AugmentConfig, AugmentedView};
use super::losses::{contrastive_loss, mim_loss, rotation_loss, NUM_ROTATIONS};
use crate::data::GrayImage;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{conv1x1, global_avg_pool, pixel_shuffle, scalar, OptimConfig};
use crate::params::{derive_seed, ParamStore};
use crate::sseg::{Encoder, EncoderConfig, FeaturePyramid};

pub const SSL_PREFIX: &str = "ssl.";

/// Weights of the rotation, reconstruction and contrastive terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rotation: f64,
    pub mim: f64,
    pub contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rotation: 1.0,
            mim: 1.0,
            contrastive: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub augment: AugmentConfig,
    pub weights: LossWeights,
    pub temperature: f64,
    pub projection_dim: usize,
    /// Restrict the reconstruction loss to masked patches.
    pub mim_masked_only: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            augment: AugmentConfig::default(),
            weights: LossWeights::default(),
            temperature: 0.5,
            projection_dim: 128,
            mim_masked_only: false,
        }
    }
}

/// Rotation, reconstruction and projection heads on the deepest pyramid level.
#[derive(Debug, Clone)]
pub struct SslHeads {
    rotation: Linear,
    reconstruction: Conv2d,
    proj1: Linear,
    proj2: Linear,
    upscale: usize,
}

impl SslHeads {
    pub fn new(enc: &EncoderConfig, projection_dim: usize, vb: VarBuilder) -> Result<Self> {
        let last = enc.num_stages() - 1;
        let c = enc.stage_channels(last);
        let upscale = enc.patch_size << last;
        Ok(Self {
            rotation: linear(c, NUM_ROTATIONS, vb.pp("rotation"))?,
            reconstruction: conv1x1(c, enc.in_channels * upscale * upscale, vb.pp("reconstruction"))?,
            proj1: linear(c, c, vb.pp("projection.fc1"))?,
            proj2: linear(c, projection_dim, vb.pp("projection.fc2"))?,
            upscale,
        })
    }

    fn deepest(pyr: &FeaturePyramid) -> Result<&Tensor> {
        pyr.levels
            .last()
            .ok_or_else(|| Error::Dimension("empty feature pyramid".into()))
    }

    /// `(N, 4)` rotation logits.
    pub fn rotation_logits(&self, pyr: &FeaturePyramid) -> Result<Tensor> {
        Ok(self.rotation.forward(&global_avg_pool(Self::deepest(pyr)?)?)?)
    }

    /// `(N, C_in, H, W)` image reconstruction.
    pub fn reconstruct(&self, pyr: &FeaturePyramid) -> Result<Tensor> {
        pixel_shuffle(&self.reconstruction.forward(Self::deepest(pyr)?)?, self.upscale)
    }

    /// `(N, d)` embeddings, not yet normalized.
    pub fn project(&self, pyr: &FeaturePyramid) -> Result<Tensor> {
        let pooled = global_avg_pool(Self::deepest(pyr)?)?;
        Ok(self.proj2.forward(&self.proj1.forward(&pooled)?.relu()?)?)
    }
}

/// Loss terms of one pretraining step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslBatchLoss {
    pub loss_rot: f64,
    pub loss_mim: f64,
    pub loss_cl: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Encoder plus heads trained jointly on the three pretext tasks.
pub struct SslPretrainer {
    cfg: SslConfig,
    params: ParamStore,
    encoder: Encoder,
    heads: SslHeads,
    opt: AdamW,
    seed: u64,
    step: usize,
}

impl SslPretrainer {
    /// Encoder variables live under `encoder.` so they load directly into a
    /// segmentation network; head variables live under `ssl.`.
    pub fn new(
        enc: &EncoderConfig,
        cfg: SslConfig,
        optim: &OptimConfig,
        params: &ParamStore,
        seed: u64,
    ) -> Result<Self> {
        if !(cfg.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", cfg.temperature)));
        }
        let vb = params.var_builder();
        let encoder = Encoder::new(enc, vb.pp("encoder"))?;
        let heads = SslHeads::new(enc, cfg.projection_dim, vb.pp("ssl"))?;
        let opt = optim.build(params.trainable_vars(""))?;
        Ok(Self {
            cfg,
            params: params.clone(),
            encoder,
            heads,
            opt,
            seed,
            step: 0,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn config(&self) -> &SslConfig {
        &self.cfg
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    /// The two views of image `index` at the current step.
    pub fn views(&self, img: &GrayImage, index: usize) -> Result<[AugmentedView; 2]> {
        let view = |v: u64| {
            let seed = derive_seed(self.seed, &[self.step as u64, index as u64, v]);
            augment_view(img, &self.cfg.augment, seed)
        };
        Ok([view(0)?, view(1)?])
    }

    /// Builds both augmented views of the batch, evaluates the three losses,
    /// and applies one optimizer update.
    pub fn pretrain_step(&mut self, batch: &[&GrayImage]) -> Result<SslBatchLoss> {
        if batch.len() < 2 {
            return Err(Error::Validation(format!(
                "pretraining needs a batch of at least 2 images, got {}",
                batch.len()
            )));
        }
        let n = batch.len();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for (i, img) in batch.iter().enumerate() {
            let [a, b] = self.views(img, i)?;
            first.push(a);
            second.push(b);
        }
        let views: Vec<&AugmentedView> = first.iter().chain(second.iter()).collect();
        let dev = self.params.device();
        let dtype = self.params.dtype();
        let stack = |pick: &dyn Fn(&AugmentedView) -> &GrayImage| -> Result<Tensor> {
            let imgs: Vec<&GrayImage> = views.iter().map(|v| pick(v)).collect();
            Ok(GrayImage::stack(&imgs, dev)?.to_dtype(dtype)?)
        };
        let inputs = stack(&|v| &v.masked)?;
        let targets = stack(&|v| &v.rotated)?;
        let labels: Vec<u8> = views.iter().map(|v| v.rotation_label).collect();

        let pyr = self.encoder.forward_t(&inputs, true)?;
        let loss_rot = rotation_loss(&self.heads.rotation_logits(&pyr)?, &labels)?;
        let weights = if self.cfg.mim_masked_only {
            let (h, w) = batch[0].resolution();
            let data: Vec<f32> = views.iter().flat_map(|v| v.mask_map.pixel_weights()).collect();
            Some(Tensor::from_vec(data, (2 * n, 1, h, w), dev)?.to_dtype(dtype)?)
        } else {
            None
        };
        let loss_mim = mim_loss(&self.heads.reconstruct(&pyr)?, &targets, weights.as_ref())?;
        let z = self.heads.project(&pyr)?;
        let loss_cl = contrastive_loss(&z.narrow(0, 0, n)?, &z.narrow(0, n, n)?, self.cfg.temperature)?;

        let w = self.cfg.weights;
        let rot = ensure_finite("rotation", self.step, scalar(&loss_rot)?)?;
        let mim = ensure_finite("mim", self.step, scalar(&loss_mim)?)?;
        let cl = ensure_finite("contrastive", self.step, scalar(&loss_cl)?)?;
        let total_t = ((loss_rot.affine(w.rotation, 0.0)? + loss_mim.affine(w.mim, 0.0)?)?
            + loss_cl.affine(w.contrastive, 0.0)?)?;
        let total = ensure_finite("total", self.step, w.rotation * rot + w.mim * mim + w.contrastive * cl)?;
        self.opt.backward_step(&total_t)?;
        self.step += 1;
        Ok(SslBatchLoss {
            loss_rot: rot,
            loss_mim: mim,
            loss_cl: cl,
            total,
            weights: w,
        })
    }
}
