use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer};
use serde::{Deserialize, Serialize};

use super::losses::{l1, loss_recon_seg, loss_transfer_seg, lsgan};
use super::networks::{PatchDiscriminator, ResnetGenerator, Segmentor};
use crate::data::{dataset::epoch_order, GrayImage, Sample, SegMask};
use crate::error::{ensure_finite, Error, Result};
use crate::eval::dsc;
use crate::nn::{scalar, OptimConfig};
use crate::params::ParamStore;
use crate::sseg::loss_segmentation;

pub const G_ST_PREFIX: &str = "g_st.";
pub const G_TS_PREFIX: &str = "g_ts.";
pub const D_T_PREFIX: &str = "d_t.";
pub const D_S_PREFIX: &str = "d_s.";
pub const SEG_PREFIX: &str = "seg.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleConfig {
    pub resolution: usize,
    pub ngf: usize,
    pub n_blocks: usize,
    pub ndf: usize,
    pub seg_base_channels: usize,
    pub num_classes: usize,
    pub lambda_cyc: f64,
    pub lambda_seg: f64,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            ngf: 16,
            n_blocks: 6,
            ndf: 16,
            seg_base_channels: 8,
            num_classes: 2,
            lambda_cyc: 10.0,
            lambda_seg: 1.0,
        }
    }
}

impl StyleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % 4 != 0 {
            return Err(Error::Config(format!(
                "style resolution {} must be a positive multiple of 4",
                self.resolution
            )));
        }
        if self.ngf == 0 || self.ndf == 0 || self.seg_base_channels == 0 {
            return Err(Error::Config("style network widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.lambda_cyc < 0.0 || self.lambda_seg < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

fn to_signed(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(2.0, -1.0)?)
}

fn to_unit(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.5)?)
}

/// Runs a DTI→LGE generator on one `[0, 1]` image of side `resolution` and
/// maps the result back to `[0, 1]`.
pub fn translate_image(
    g: &ResnetGenerator,
    params: &ParamStore,
    resolution: usize,
    img: &GrayImage,
) -> Result<GrayImage> {
    if img.resolution() != (resolution, resolution) {
        return Err(Error::Dimension(format!(
            "style transfer expects {resolution}x{resolution} images, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let x = img.to_tensor(params.device())?.to_dtype(params.dtype())?;
    let y = to_unit(&g.forward(&to_signed(&x)?)?)?.clamp(0.0, 1.0)?;
    GrayImage::from_tensor(&y, crate::data::Domain::Lge)
}

/// Both generators, both discriminators and the segmentor.
#[derive(Debug, Clone)]
pub struct StyleModels {
    cfg: StyleConfig,
    params: ParamStore,
    pub g_st: ResnetGenerator,
    pub g_ts: ResnetGenerator,
    pub d_t: PatchDiscriminator,
    pub d_s: PatchDiscriminator,
    pub seg: Segmentor,
}

impl StyleModels {
    pub fn new(cfg: StyleConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let vb = params.var_builder();
        Ok(Self {
            g_st: ResnetGenerator::new(cfg.ngf, cfg.n_blocks, vb.pp("g_st"))?,
            g_ts: ResnetGenerator::new(cfg.ngf, cfg.n_blocks, vb.pp("g_ts"))?,
            d_t: PatchDiscriminator::new(cfg.ndf, vb.pp("d_t"))?,
            d_s: PatchDiscriminator::new(cfg.ndf, vb.pp("d_s"))?,
            seg: Segmentor::new(cfg.seg_base_channels, cfg.num_classes, vb.pp("seg"))?,
            params: params.clone(),
            cfg,
        })
    }

    pub fn config(&self) -> &StyleConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_resolution(&self, img: &GrayImage) -> Result<()> {
        let r = self.cfg.resolution;
        if img.resolution() != (r, r) {
            return Err(Error::Dimension(format!(
                "style transfer expects {r}x{r} images, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    pub(crate) fn stack(&self, images: &[&GrayImage]) -> Result<Tensor> {
        for img in images {
            self.check_resolution(img)?;
        }
        Ok(GrayImage::stack(images, self.params.device())?.to_dtype(self.params.dtype())?)
    }

    /// DTI-style → LGE-style translation of a `[0, 1]` batch, output in `[0, 1]`.
    pub fn translate_tensor(&self, x: &Tensor) -> Result<Tensor> {
        to_unit(&self.g_st.forward(&to_signed(x)?)?)
    }

    /// DTI-style image → LGE-style image at the same resolution.
    pub fn translate(&self, dti: &GrayImage) -> Result<GrayImage> {
        translate_image(&self.g_st, &self.params, self.cfg.resolution, dti)
    }

    /// Segmentor class probabilities for `[0, 1]` LGE-style images.
    pub fn seg_probabilities(&self, images: &[&GrayImage]) -> Result<Tensor> {
        self.seg.probabilities(&self.stack(images)?)
    }

    pub fn seg_predict(&self, img: &GrayImage) -> Result<SegMask> {
        SegMask::from_scores(&self.seg.forward_t(&self.stack(&[img])?, false)?)
    }

    /// Fraction of correct real/fake calls of the LGE-domain discriminator on
    /// `real` LGE images and translations of `dti` images, thresholding each
    /// image's mean patch score at 0.5.
    pub fn discriminator_accuracy(&self, dti: &[&GrayImage], real: &[&GrayImage]) -> Result<f64> {
        let mean_scores = |x: &Tensor| -> Result<Vec<f32>> {
            let s = self.d_t.forward(x)?.flatten_from(1)?.mean(1)?;
            Ok(s.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?)
        };
        let fake = self.g_st.forward(&to_signed(&self.stack(dti)?)?)?;
        let real = to_signed(&self.stack(real)?)?;
        let hits = mean_scores(&real)?.iter().filter(|&&v| v > 0.5).count()
            + mean_scores(&fake)?.iter().filter(|&&v| v <= 0.5).count();
        Ok(hits as f64 / (dti.len() + real.dim(0)?) as f64)
    }
}

/// A DTI-style and an LGE-style image of the same anatomy.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub pair_id: String,
    pub dti: GrayImage,
    pub lge: GrayImage,
}

impl ImagePair {
    /// Links two samples sharing a pair id; their order does not matter.
    pub fn from_samples(a: &Sample, b: &Sample) -> Result<Self> {
        match (&a.pair_id, &b.pair_id) {
            (Some(x), Some(y)) if x == y => {}
            _ => {
                return Err(Error::Validation(format!(
                    "samples `{}` and `{}` are not paired",
                    a.id, b.id
                )))
            }
        }
        let (dti, lge) = match (a.image.domain().is_lge_like(), b.image.domain().is_lge_like()) {
            (false, true) => (a, b),
            (true, false) => (b, a),
            _ => {
                return Err(Error::Validation(format!(
                    "pair `{}` needs one DTI-style and one LGE-style image",
                    a.pair_id.as_deref().unwrap_or_default()
                )))
            }
        };
        Ok(Self {
            pair_id: a.pair_id.clone().unwrap_or_default(),
            dti: dti.image.clone(),
            lge: lge.image.clone(),
        })
    }

    /// Groups samples by pair id, sorted by id. Samples without a pair id are
    /// skipped.
    pub fn collect(samples: &[Sample]) -> Result<Vec<Self>> {
        let mut groups: std::collections::BTreeMap<&str, Vec<&Sample>> = Default::default();
        for s in samples {
            if let Some(p) = &s.pair_id {
                groups.entry(p).or_default().push(s);
            }
        }
        groups
            .into_iter()
            .map(|(id, g)| match g.as_slice() {
                [a, b] => Self::from_samples(a, b),
                _ => Err(Error::Validation(format!(
                    "pair `{id}` has {} members instead of 2",
                    g.len()
                ))),
            })
            .collect()
    }
}

/// Loss terms of one style-transfer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleLossReport {
    pub loss_gan_g: f64,
    pub loss_gan_d: f64,
    pub loss_cycle: f64,
    pub loss_transfer_seg: f64,
    pub loss_recon_seg: f64,
    pub total_g: f64,
}

/// Alternating generator/discriminator training with a frozen segmentor.
pub struct StyleTrainer {
    models: StyleModels,
    opt_g: AdamW,
    opt_d: AdamW,
    step: usize,
}

impl StyleTrainer {
    /// Freezes the segmentor, then builds one optimizer for both generators
    /// and one for both discriminators.
    pub fn new(models: StyleModels, optim_g: &OptimConfig, optim_d: &OptimConfig) -> Result<Self> {
        let p = models.params();
        p.freeze(SEG_PREFIX);
        let mut gen = p.trainable_vars(G_ST_PREFIX);
        gen.extend(p.trainable_vars(G_TS_PREFIX));
        let mut disc = p.trainable_vars(D_T_PREFIX);
        disc.extend(p.trainable_vars(D_S_PREFIX));
        Ok(Self {
            opt_g: optim_g.build(gen)?,
            opt_d: optim_d.build(disc)?,
            models,
            step: 0,
        })
    }

    pub fn models(&self) -> &StyleModels {
        &self.models
    }

    pub fn into_models(self) -> StyleModels {
        self.models
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    /// One generator update followed by one discriminator update. Ground-truth
    /// masks are never read; the segmentor supplies the mask targets.
    pub fn train_step(&mut self, pairs: &[ImagePair]) -> Result<StyleLossReport> {
        if pairs.is_empty() {
            return Err(Error::Validation("empty style batch".into()));
        }
        let m = &self.models;
        let lambda_cyc = m.cfg.lambda_cyc;
        let lambda_seg = m.cfg.lambda_seg;
        let dti: Vec<&GrayImage> = pairs.iter().map(|p| &p.dti).collect();
        let lge: Vec<&GrayImage> = pairs.iter().map(|p| &p.lge).collect();
        let real_s = to_signed(&m.stack(&dti)?)?;
        let lge01 = m.stack(&lge)?;
        let real_t = to_signed(&lge01)?;

        let fake_t = m.g_st.forward(&real_s)?;
        let rec_s = m.g_ts.forward(&fake_t)?;
        let fake_s = m.g_ts.forward(&real_t)?;
        let rec_t = m.g_st.forward(&fake_s)?;

        let gan_g = (lsgan(&m.d_t.forward(&fake_t)?, true)? + lsgan(&m.d_s.forward(&fake_s)?, true)?)?;
        let cycle = (l1(&rec_s, &real_s)? + l1(&rec_t, &real_t)?)?;
        let mask_ori = m.seg.probabilities(&lge01)?.detach();
        let (mask_trans, mask_recon) = if lambda_seg > 0.0 {
            (
                m.seg.probabilities(&to_unit(&fake_t)?)?,
                m.seg.probabilities(&to_unit(&rec_t)?)?,
            )
        } else {
            (
                m.seg.probabilities(&to_unit(&fake_t.detach())?)?,
                m.seg.probabilities(&to_unit(&rec_t.detach())?)?,
            )
        };
        let transfer = loss_transfer_seg(&mask_trans, &mask_ori)?;
        let recon = loss_recon_seg(&mask_recon, &mask_ori)?;
        let mut total_g = (&gan_g + cycle.affine(lambda_cyc, 0.0)?)?;
        if lambda_seg > 0.0 {
            total_g = (total_g + (&transfer + &recon)?.affine(lambda_seg, 0.0)?)?;
        }

        let step = self.step;
        let loss_gan_g = ensure_finite("gan_g", step, scalar(&gan_g)?)?;
        let loss_cycle = ensure_finite("cycle", step, scalar(&cycle)?)?;
        let loss_transfer_seg = ensure_finite("transfer_seg", step, scalar(&transfer)?)?;
        let loss_recon_seg = ensure_finite("recon_seg", step, scalar(&recon)?)?;
        let total = ensure_finite("total_g", step, scalar(&total_g)?)?;
        self.opt_g.backward_step(&total_g)?;

        let fake_t = fake_t.detach();
        let fake_s = fake_s.detach();
        let d_t = (lsgan(&m.d_t.forward(&real_t)?, true)? + lsgan(&m.d_t.forward(&fake_t)?, false)?)?;
        let d_s = (lsgan(&m.d_s.forward(&real_s)?, true)? + lsgan(&m.d_s.forward(&fake_s)?, false)?)?;
        let gan_d = (d_t + d_s)?.affine(0.5, 0.0)?;
        let loss_gan_d = ensure_finite("gan_d", step, scalar(&gan_d)?)?;
        self.opt_d.backward_step(&gan_d)?;

        self.step += 1;
        Ok(StyleLossReport {
            loss_gan_g,
            loss_gan_d,
            loss_cycle,
            loss_transfer_seg,
            loss_recon_seg,
            total_g: total,
        })
    }
}

/// Stopping rule and optimizer for segmentor pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegPretrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for SegPretrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch_size: 4,
            eval_every: 25,
            patience: 4,
            min_delta: 1e-3,
            optim: OptimConfig::default().with_lr(1e-3),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegPretrainReport {
    pub steps: usize,
    pub best_val_dsc: f64,
    pub losses: Vec<f64>,
    /// `(step, mean validation DSC)` at every evaluation.
    pub val_history: Vec<(usize, f64)>,
}

fn mean_dsc(models: &StyleModels, data: &[(GrayImage, SegMask)]) -> Result<f64> {
    let mut total = 0.0;
    for (img, mask) in data {
        total += dsc(&models.seg_predict(img)?, mask)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains the segmentor with dice + cross-entropy until the validation DSC
/// stops improving, restores the best weights, then freezes it.
///
/// When `val` is empty the training set doubles as the validation set.
pub fn pretrain_segmentor(
    models: &StyleModels,
    train: &[(GrayImage, SegMask)],
    val: &[(GrayImage, SegMask)],
    cfg: &SegPretrainConfig,
) -> Result<SegPretrainReport> {
    if train.is_empty() {
        return Err(Error::Validation("segmentor pretraining needs at least one sample".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config("batch size and eval interval must be positive".into()));
    }
    let params = models.params();
    let vars = params.trainable_vars(SEG_PREFIX);
    if vars.is_empty() {
        return Err(Error::Validation("segmentor is already frozen".into()));
    }
    let val = if val.is_empty() { train } else { val };
    let mut opt = cfg.optim.build(vars)?;
    let mut report = SegPretrainReport {
        steps: 0,
        best_val_dsc: f64::NEG_INFINITY,
        losses: Vec::new(),
        val_history: Vec::new(),
    };
    let mut best = params.snapshot(SEG_PREFIX)?;
    let mut stale = 0;
    let mut order = Vec::new();
    let mut epoch = 0u64;
    'outer: while report.steps < cfg.max_steps {
        while order.len() < cfg.batch_size.min(train.len()) {
            order.extend(epoch_order(train.len(), epoch, cfg.seed));
            epoch += 1;
        }
        let idx: Vec<usize> = order.drain(..cfg.batch_size.min(train.len())).collect();
        let images: Vec<&GrayImage> = idx.iter().map(|&i| &train[i].0).collect();
        let masks: Vec<&SegMask> = idx.iter().map(|&i| &train[i].1).collect();
        let x = models.stack(&images)?;
        let y = SegMask::stack(&masks, params.device())?;
        let loss = loss_segmentation(&models.seg.forward_t(&x, true)?, &y)?;
        report
            .losses
            .push(ensure_finite("segmentor", report.steps, scalar(&loss)?)?);
        opt.backward_step(&loss)?;
        report.steps += 1;
        if report.steps % cfg.eval_every == 0 || report.steps == cfg.max_steps {
            let score = mean_dsc(models, val)?;
            report.val_history.push((report.steps, score));
            if score > report.best_val_dsc + cfg.min_delta {
                report.best_val_dsc = score;
                best = params.snapshot(SEG_PREFIX)?;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break 'outer;
                }
            }
        }
    }
    for (name, (shape, data)) in &best {
        let t = Tensor::from_slice(data, shape.as_slice(), params.device())?.to_dtype(params.dtype())?;
        params.set(name, &t)?;
    }
    params.freeze(SEG_PREFIX);
    Ok(report)
}
