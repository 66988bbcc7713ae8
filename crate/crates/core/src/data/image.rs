use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition style an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Diffusion-tensor style: low resolution, weak lesion contrast.
    Dti,
    /// Late-gadolinium-enhancement style: bright lesions.
    Lge,
    SynthA,
    SynthB,
}

impl Domain {
    /// True for domains that play the LGE role (bright lesions).
    pub fn is_lge_like(self) -> bool {
        matches!(self, Domain::Lge | Domain::SynthB)
    }
}

/// Single-channel intensity image with values in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    domain: Domain,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, domain: Domain) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} pixels for {height}x{width}, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Validation(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            domain,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32, domain: Domain) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], domain)
    }

    /// Builds an image from arbitrary values, clamping them into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f32>, domain: Domain) -> Result<Self> {
        let pixels = values
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self::new(height, width, pixels, domain)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// `(1, 1, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.pixels, (1, 1, self.height, self.width), device)?)
    }

    /// Stacks same-sized images into an `(N, 1, H, W)` tensor.
    pub fn stack(images: &[&GrayImage], device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty batch".into()))?;
        let (h, w) = first.resolution();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.resolution() != (h, w) {
                return Err(Error::Dimension(format!(
                    "batch mixes resolutions {:?} and {:?}",
                    (h, w),
                    img.resolution()
                )));
            }
            data.extend_from_slice(&img.pixels);
        }
        Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?)
    }

    /// Reads a `(1, H, W)` or `(H, W)` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor, domain: Domain) -> Result<Self> {
        let t = t.to_dtype(DType::F32)?;
        let dims = t.dims().to_vec();
        let (h, w) = match dims.as_slice() {
            [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
            _ => {
                return Err(Error::Dimension(format!(
                    "expected a single-channel image tensor, got {dims:?}"
                )))
            }
        };
        Self::from_clamped(h, w, t.flatten_all()?.to_vec1::<f32>()?, domain)
    }
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    num_classes: u8,
}

impl SegMask {
    pub const DEFAULT_CLASSES: u8 = 2;

    pub fn new(height: usize, width: usize, labels: Vec<u8>, num_classes: u8) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} labels for {height}x{width}, got {}",
                height * width,
                labels.len()
            )));
        }
        if num_classes < 1 {
            return Err(Error::Validation("num_classes must be at least 1".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} is not below num_classes {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            num_classes,
        })
    }

    pub fn background(height: usize, width: usize, num_classes: u8) -> Result<Self> {
        Self::new(height, width, vec![0; height * width], num_classes)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != 0).count()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.labels.len() as f64
    }

    /// Class-major one-hot view, `C × H × W` values.
    pub fn one_hot(&self) -> Vec<f32> {
        let n = self.labels.len();
        let mut out = vec![0.0; self.num_classes as usize * n];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize * n + i] = 1.0;
        }
        out
    }

    /// `(H, W)` tensor of u32 labels.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let data: Vec<u32> = self.labels.iter().map(|&l| l as u32).collect();
        Ok(Tensor::from_vec(data, (self.height, self.width), device)?)
    }

    pub fn stack(masks: &[&SegMask], device: &Device) -> Result<Tensor> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Dimension("cannot stack an empty batch".into()))?;
        let (h, w) = first.resolution();
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if m.resolution() != (h, w) {
                return Err(Error::Dimension(format!(
                    "batch mixes mask resolutions {:?} and {:?}",
                    (h, w),
                    m.resolution()
                )));
            }
            data.extend(m.labels.iter().map(|&l| l as u32));
        }
        Ok(Tensor::from_vec(data, (masks.len(), h, w), device)?)
    }

    /// Argmax over the class axis of a `(C, H, W)` or `(1, C, H, W)` score tensor.
    pub fn from_scores(scores: &Tensor) -> Result<Self> {
        let scores = match scores.rank() {
            4 => scores.squeeze(0)?,
            3 => scores.clone(),
            r => {
                return Err(Error::Dimension(format!(
                    "expected (C,H,W) scores, got rank {r}"
                )))
            }
        };
        let (c, h, w) = scores.dims3()?;
        let labels = scores
            .argmax(0)?
            .flatten_all()?
            .to_vec1::<u32>()?
            .into_iter()
            .map(|l| l as u8)
            .collect();
        Self::new(h, w, labels, c as u8)
    }
}

/// Result of [`normalize`]; `constant` flags a degenerate input.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub image: GrayImage,
    pub constant: bool,
}

/// Per-image min-max scaling to `[0, 1]`.
///
/// A constant input has no range to scale; it maps to all zeros and sets the
/// `constant` flag.
pub fn normalize(raw: &[f32], height: usize, width: usize, domain: Domain) -> Result<Normalized> {
    if raw.len() != height * width {
        return Err(Error::Dimension(format!(
            "expected {} values for {height}x{width}, got {}",
            height * width,
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("image contains non-finite values".into()));
    }
    let (min, max) = raw
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(max > min) {
        log::warn!("constant image normalized to zeros");
        return Ok(Normalized {
            image: GrayImage::filled(height, width, 0.0, domain)?,
            constant: true,
        });
    }
    let range = max - min;
    let pixels = raw
        .iter()
        .map(|&v| ((v - min) / range).clamp(0.0, 1.0))
        .collect();
    Ok(Normalized {
        image: GrayImage::new(height, width, pixels, domain)?,
        constant: false,
    })
}

/// Resolution change that respects the value semantics of the type.
pub trait Resample: Sized {
    fn resample(&self, target: (usize, usize)) -> Result<Self>;
}

/// Source coordinate and blend weight for half-pixel-centre bilinear sampling.
fn bilinear_taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = (src - i0 as f64) as f32;
    (i0, i1, if i0 == i1 { 0.0 } else { frac })
}

fn nearest_tap(dst: usize, in_len: usize, out_len: usize) -> usize {
    (((dst as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
}

impl Resample for GrayImage {
    /// Bilinear interpolation with half-pixel centres and edge clamping.
    fn resample(&self, (th, tw): (usize, usize)) -> Result<Self> {
        if th == 0 || tw == 0 {
            return Err(Error::Dimension(format!("target size {th}x{tw} must be positive")));
        }
        if (th, tw) == self.resolution() {
            return Ok(self.clone());
        }
        let rows: Vec<_> = (0..th).map(|y| bilinear_taps(y, self.height, th)).collect();
        let cols: Vec<_> = (0..tw).map(|x| bilinear_taps(x, self.width, tw)).collect();
        let mut out = Vec::with_capacity(th * tw);
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
                let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        GrayImage::from_clamped(th, tw, out, self.domain)
    }
}

impl Resample for SegMask {
    /// Nearest-neighbour lookup; never invents labels.
    fn resample(&self, (th, tw): (usize, usize)) -> Result<Self> {
        if th == 0 || tw == 0 {
            return Err(Error::Dimension(format!("target size {th}x{tw} must be positive")));
        }
        let mut labels = Vec::with_capacity(th * tw);
        for y in 0..th {
            let sy = nearest_tap(y, self.height, th);
            for x in 0..tw {
                labels.push(self.get(sy, nearest_tap(x, self.width, tw)));
            }
        }
        SegMask::new(th, tw, labels, self.num_classes)
    }
}

/// Averages non-overlapping `factor × factor` cells.
pub fn area_downsample(img: &GrayImage, factor: usize) -> Result<GrayImage> {
    if factor == 0 || img.height % factor != 0 || img.width % factor != 0 {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by {factor}",
            img.height, img.width
        )));
    }
    let (oh, ow) = (img.height / factor, img.width / factor);
    let mut out = vec![0f64; oh * ow];
    for y in 0..img.height {
        let row = &img.pixels[y * img.width..(y + 1) * img.width];
        let orow = &mut out[(y / factor) * ow..(y / factor + 1) * ow];
        for (x, &v) in row.iter().enumerate() {
            orow[x / factor] += v as f64;
        }
    }
    let norm = (factor * factor) as f64;
    GrayImage::from_clamped(
        oh,
        ow,
        out.into_iter().map(|s| (s / norm) as f32).collect(),
        img.domain,
    )
}

/// The canonical 512×512 → 64×64 reduction used to build network inputs.
pub fn downsample_lge(img512: &GrayImage) -> Result<GrayImage> {
    if img512.resolution() != (512, 512) {
        return Err(Error::Dimension(format!(
            "expected a 512x512 image, got {}x{}",
            img512.height, img512.width
        )));
    }
    area_downsample(img512, 8)
}
