use std::collections::{BTreeMap, BTreeSet};

use candle_core::Tensor;

use super::config::{EncoderConfig, SSegConfig};
use crate::checkpoint::{CheckpointReader, TensorData};
use super::decoder::{DecoderPart1, DecoderPart2};
use super::encoder::{Encoder, FeaturePyramid};
use crate::data::{GrayImage, SegMask};
use crate::error::{Error, Result};
use crate::nn::resize_bilinear;
use crate::params::ParamStore;

pub const ENCODER_PREFIX: &str = "encoder.";
pub const DECODER1_PREFIX: &str = "decoder1.";
pub const DECODER2_PREFIX: &str = "decoder2.";

/// Super-resolution segmentation network: encoder, decoder part 1 back to the
/// input resolution, decoder part 2 up to `scale ×` that resolution.
#[derive(Debug, Clone)]
pub struct SSegNet {
    cfg: SSegConfig,
    params: ParamStore,
    encoder: Encoder,
    decoder1: DecoderPart1,
    decoder2: DecoderPart2,
}

impl SSegNet {
    /// Registers the network's variables in `params` (creating any missing
    /// ones from the store's seeded generator).
    pub fn new(cfg: SSegConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let vb = params.var_builder();
        Ok(Self {
            encoder: Encoder::new(&cfg.encoder, vb.pp("encoder"))?,
            decoder1: DecoderPart1::new(&cfg, vb.pp("decoder1"))?,
            decoder2: DecoderPart2::new(&cfg, vb.pp("decoder2"))?,
            params: params.clone(),
            cfg,
        })
    }

    pub fn with_seed(cfg: SSegConfig, seed: u64) -> Result<Self> {
        Self::new(cfg, &ParamStore::new(seed))
    }

    pub fn config(&self) -> &SSegConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let enc = &self.cfg.encoder;
        let divisor = enc.patch_size << (enc.num_stages() - 1);
        if c != enc.in_channels || h % divisor != 0 || w % divisor != 0 {
            return Err(Error::Dimension(format!(
                "input {c}x{h}x{w} needs {} channels and sides divisible by {divisor}",
                enc.in_channels
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor, train: bool) -> Result<FeaturePyramid> {
        self.check_input(x)?;
        let pyr = self.encoder.forward_t(x, train)?;
        let (_, _, h, w) = x.dims4()?;
        pyr.check_schedule(&self.cfg.encoder, h, w)?;
        Ok(pyr)
    }

    pub fn decode_part1(&self, pyr: &FeaturePyramid, x: &Tensor, train: bool) -> Result<Tensor> {
        self.decoder1.forward_t(pyr, x, train)
    }

    pub fn decode_part2(&self, fmap: &Tensor, train: bool) -> Result<Tensor> {
        self.decoder2.forward_t(fmap, train)
    }

    /// `(N, 1, H, W)` → logits `(N, classes, scale·H, scale·W)`.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let pyr = self.encode(x, train)?;
        let f = self.decode_part1(&pyr, x, train)?;
        self.decode_part2(&f, train)
    }

    /// Eval-mode argmax mask for one image.
    pub fn predict(&self, img: &GrayImage) -> Result<SegMask> {
        let x = img.to_tensor(self.params.device())?.to_dtype(self.params.dtype())?;
        SegMask::from_scores(&self.forward_t(&x, false)?)
    }

    /// Two-stage baseline: segment at the input resolution, bilinearly
    /// upsample the class probabilities by `scale`, then take the argmax.
    /// Requires a network built with `scale = 1`.
    pub fn predict_two_stage(&self, img: &GrayImage, scale: usize) -> Result<SegMask> {
        if self.cfg.scale != 1 {
            return Err(Error::Config(format!(
                "two-stage prediction needs a scale-1 network, this one has scale {}",
                self.cfg.scale
            )));
        }
        super::config::validate_scale(scale)?;
        let x = img.to_tensor(self.params.device())?.to_dtype(self.params.dtype())?;
        let probs = candle_nn::ops::softmax(&self.forward_t(&x, false)?, 1)?;
        let (_, _, h, w) = probs.dims4()?;
        SegMask::from_scores(&resize_bilinear(&probs, h * scale, w * scale)?)
    }

    /// Replaces encoder weights from a tensor map keyed by full variable name.
    ///
    /// Every encoder variable must be present with a matching shape. Variables
    /// of the network absent from `tensors` are reported, as are checkpoint
    /// entries the network does not use.
    pub fn load_encoder_weights(&self, tensors: &BTreeMap<String, TensorData>) -> Result<EncoderLoadReport> {
        let names: BTreeSet<String> = tensors.keys().cloned().collect();
        self.load_encoder_with(&names, |n| Ok(tensors[n].clone()))
    }

    /// Loads the encoder from an archive whose stored config carries an
    /// `encoder` section equal to this network's encoder config. Only
    /// `encoder.` tensors are read.
    pub fn load_pretrained_encoder(&self, reader: &CheckpointReader) -> Result<EncoderLoadReport> {
        let stored = reader
            .manifest()
            .config
            .get("encoder")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("archive config has no encoder section".into()))?;
        let stored: EncoderConfig = serde_json::from_value(stored)?;
        if stored != self.cfg.encoder {
            return Err(Error::Checkpoint(format!(
                "encoder config mismatch: archive {stored:?}, model {:?}",
                self.cfg.encoder
            )));
        }
        let names: BTreeSet<String> = reader.manifest().names().map(str::to_string).collect();
        self.load_encoder_with(&names, |n| reader.tensor(n))
    }

    fn load_encoder_with(
        &self,
        available: &BTreeSet<String>,
        fetch: impl Fn(&str) -> Result<TensorData>,
    ) -> Result<EncoderLoadReport> {
        let encoder_names = self.params.names_with_prefix(ENCODER_PREFIX);
        let mut loaded = Vec::with_capacity(encoder_names.len());
        let mut bad = Vec::new();
        for name in &encoder_names {
            if !available.contains(name) {
                bad.push(format!("{name}: missing from checkpoint"));
                continue;
            }
            let (shape, data) = fetch(name)?;
            let var = self.params.get(name).expect("listed name exists");
            if shape.as_slice() != var.dims() {
                bad.push(format!("{name}: checkpoint {shape:?}, model {:?}", var.dims()));
            } else {
                loaded.push((name.clone(), shape, data));
            }
        }
        if !bad.is_empty() {
            return Err(Error::KeyMismatch { keys: bad });
        }
        for (name, shape, data) in &loaded {
            let t = Tensor::from_slice(data, shape.as_slice(), self.params.device())?
                .to_dtype(self.params.dtype())?;
            self.params.set(name, &t)?;
        }
        let model: BTreeSet<String> = self.params.names().into_iter().collect();
        Ok(EncoderLoadReport {
            loaded: encoder_names,
            not_in_checkpoint: model.difference(available).cloned().collect(),
            unused: available.difference(&model).cloned().collect(),
        })
    }
}

/// Outcome of a partial (encoder-only) weight load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLoadReport {
    pub loaded: Vec<String>,
    pub not_in_checkpoint: Vec<String>,
    pub unused: Vec<String>,
}
