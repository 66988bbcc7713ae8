use candle_nn::{AdamW, Optimizer};

use super::loss::loss_segmentation;
use super::model::SSegNet;
use crate::data::{GrayImage, SegMask};
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{scalar, OptimConfig};

/// Supervised fine-tuning of an [`SSegNet`] with AdamW.
pub struct SSegTrainer {
    net: SSegNet,
    opt: AdamW,
    step: usize,
    history: Vec<f64>,
}

impl SSegTrainer {
    /// Optimizes every non-frozen variable of the network.
    pub fn new(net: SSegNet, optim: &OptimConfig) -> Result<Self> {
        let opt = optim.build(net.params().trainable_vars(""))?;
        Ok(Self {
            net,
            opt,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn net(&self) -> &SSegNet {
        &self.net
    }

    pub fn into_net(self) -> SSegNet {
        self.net
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Continue counting from a resumed run.
    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    /// Loss recorded at every completed step.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Loss of `images` against `masks` without updating anything.
    pub fn eval_loss(&self, images: &[&GrayImage], masks: &[&SegMask]) -> Result<f64> {
        let (x, y) = self.batch(images, masks)?;
        scalar(&loss_segmentation(&self.net.forward_t(&x, false)?, &y)?)
    }

    fn batch(&self, images: &[&GrayImage], masks: &[&SegMask]) -> Result<(candle_core::Tensor, candle_core::Tensor)> {
        if images.is_empty() || images.len() != masks.len() {
            return Err(Error::Validation(format!(
                "batch has {} images and {} masks",
                images.len(),
                masks.len()
            )));
        }
        let scale = self.net.config().scale;
        for (img, mask) in images.iter().zip(masks) {
            let expect = (img.height() * scale, img.width() * scale);
            if mask.resolution() != expect {
                return Err(Error::Dimension(format!(
                    "mask {:?} does not match {}x image resolution {:?}",
                    mask.resolution(),
                    scale,
                    img.resolution()
                )));
            }
        }
        let dev = self.net.params().device();
        let x = GrayImage::stack(images, dev)?.to_dtype(self.net.params().dtype())?;
        Ok((x, SegMask::stack(masks, dev)?))
    }

    /// One supervised update on a batch of low-resolution images and masks at
    /// `scale ×` their resolution. Returns the pre-update loss.
    pub fn finetune_step(&mut self, images: &[&GrayImage], masks: &[&SegMask]) -> Result<f64> {
        let (x, y) = self.batch(images, masks)?;
        let loss = loss_segmentation(&self.net.forward_t(&x, true)?, &y)?;
        let value = ensure_finite("segmentation", self.step, scalar(&loss)?)?;
        self.opt.backward_step(&loss)?;
        self.step += 1;
        self.history.push(value);
        Ok(value)
    }
}
