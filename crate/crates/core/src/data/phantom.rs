//! Synthetic two-domain cardiac phantoms.
//!
//! Each phantom is an annular "myocardium" around a blood pool with zero or
//! more infarct blobs clipped to the annulus. The same geometry is rendered
//! twice: domain A mimics DTI (weak lesion contrast, multiplicative speckle)
//! and domain B mimics LGE (bright lesion, smooth background).

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image::{area_downsample, Domain, GrayImage, Resample, SegMask};
use crate::error::{Error, Result};

/// Region intensities and texture for one rendering style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub background: f32,
    pub blood_pool: f32,
    pub myocardium: f32,
    pub lesion: f32,
    pub noise_std: f32,
    /// Multiplicative (speckle) rather than additive noise.
    pub speckle: bool,
}

impl DomainStyle {
    pub fn dti_like() -> Self {
        Self {
            background: 0.25,
            blood_pool: 0.15,
            myocardium: 0.55,
            lesion: 0.40,
            noise_std: 0.12,
            speckle: true,
        }
    }

    pub fn lge_like() -> Self {
        Self {
            background: 0.10,
            blood_pool: 0.55,
            myocardium: 0.15,
            lesion: 0.95,
            noise_std: 0.02,
            speckle: false,
        }
    }

    fn intensity(&self, region: Region) -> f32 {
        match region {
            Region::Background => self.background,
            Region::BloodPool => self.blood_pool,
            Region::Myocardium => self.myocardium,
            Region::Lesion => self.lesion,
        }
    }
}

/// Geometry ranges are fractions of the image side length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub resolution: usize,
    pub center_jitter: f32,
    pub outer_radius: (f32, f32),
    pub thickness: (f32, f32),
    pub lesion_count: (usize, usize),
    pub lesion_radius: (f32, f32),
    /// Accepted lesion pixel fraction when at least one lesion is drawn.
    pub lesion_fraction: (f64, f64),
    pub max_attempts: usize,
    pub style_a: DomainStyle,
    pub style_b: DomainStyle,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            resolution: 64,
            center_jitter: 0.04,
            outer_radius: (0.22, 0.30),
            thickness: (0.07, 0.10),
            lesion_count: (1, 2),
            lesion_radius: (0.07, 0.11),
            lesion_fraction: (0.004, 0.06),
            max_attempts: 64,
            style_a: DomainStyle::dti_like(),
            style_b: DomainStyle::lge_like(),
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f32, f32)| {
            if !(lo > 0.0 && lo <= hi) {
                Err(Error::Generation(format!("invalid {name} range ({lo}, {hi})")))
            } else {
                Ok(())
            }
        };
        if self.resolution < 4 {
            return Err(Error::Generation(format!(
                "resolution {} too small",
                self.resolution
            )));
        }
        range("outer_radius", self.outer_radius)?;
        range("thickness", self.thickness)?;
        range("lesion_radius", self.lesion_radius)?;
        if self.outer_radius.1 + self.center_jitter > 0.5 {
            return Err(Error::Generation("ring does not fit inside the image".into()));
        }
        if self.thickness.1 >= self.outer_radius.0 {
            return Err(Error::Generation(
                "ring thickness must be below the smallest outer radius".into(),
            ));
        }
        if self.lesion_radius.1 >= self.outer_radius.0 {
            return Err(Error::Generation(format!(
                "lesion radius up to {} is larger than the ring (outer radius from {})",
                self.lesion_radius.1, self.outer_radius.0
            )));
        }
        if self.lesion_count.0 > self.lesion_count.1 {
            return Err(Error::Generation("invalid lesion_count range".into()));
        }
        let (flo, fhi) = self.lesion_fraction;
        if !(0.0..=1.0).contains(&flo) || !(flo..=1.0).contains(&fhi) {
            return Err(Error::Generation("invalid lesion_fraction range".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Generation("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Background,
    BloodPool,
    Myocardium,
    Lesion,
}

#[derive(Debug, Clone)]
struct Lesion {
    cy: f32,
    cx: f32,
    radius: f32,
}

#[derive(Debug, Clone)]
struct Geometry {
    cy: f32,
    cx: f32,
    outer: f32,
    inner: f32,
    lesions: Vec<Lesion>,
}

impl Geometry {
    fn sample(rng: &mut ChaCha8Rng, p: &PhantomParams) -> Self {
        let jitter = |rng: &mut ChaCha8Rng| {
            if p.center_jitter > 0.0 {
                rng.gen_range(-p.center_jitter..=p.center_jitter)
            } else {
                0.0
            }
        };
        let cy = 0.5 + jitter(rng);
        let cx = 0.5 + jitter(rng);
        let outer = rng.gen_range(p.outer_radius.0..=p.outer_radius.1);
        let thickness = rng.gen_range(p.thickness.0..=p.thickness.1);
        let inner = outer - thickness;
        let mid = 0.5 * (outer + inner);
        let count = rng.gen_range(p.lesion_count.0..=p.lesion_count.1);
        let lesions = (0..count)
            .map(|_| {
                let angle = rng.gen_range(0.0..2.0 * PI);
                Lesion {
                    cy: cy + mid * angle.sin(),
                    cx: cx + mid * angle.cos(),
                    radius: rng.gen_range(p.lesion_radius.0..=p.lesion_radius.1),
                }
            })
            .collect();
        Self {
            cy,
            cx,
            outer,
            inner,
            lesions,
        }
    }

    /// Region at normalized coordinates.
    fn region(&self, y: f32, x: f32) -> Region {
        let d = ((y - self.cy).powi(2) + (x - self.cx).powi(2)).sqrt();
        if d < self.inner {
            Region::BloodPool
        } else if d > self.outer {
            Region::Background
        } else if self
            .lesions
            .iter()
            .any(|l| (y - l.cy).powi(2) + (x - l.cx).powi(2) <= l.radius * l.radius)
        {
            Region::Lesion
        } else {
            Region::Myocardium
        }
    }

    /// Regions sampled at pixel centres of an `res × res` grid.
    fn regions(&self, res: usize) -> Vec<Region> {
        let step = 1.0 / res as f32;
        (0..res * res)
            .map(|i| {
                let y = ((i / res) as f32 + 0.5) * step;
                let x = ((i % res) as f32 + 0.5) * step;
                self.region(y, x)
            })
            .collect()
    }
}

fn mask_from_regions(regions: &[Region], res: usize) -> Result<SegMask> {
    let labels = regions
        .iter()
        .map(|r| u8::from(*r == Region::Lesion))
        .collect();
    SegMask::new(res, res, labels, SegMask::DEFAULT_CLASSES)
}

fn render_clean(regions: &[Region], style: &DomainStyle) -> Vec<f32> {
    regions.iter().map(|r| style.intensity(*r)).collect()
}

fn apply_texture(values: &mut [f32], style: &DomainStyle, rng: &mut ChaCha8Rng) {
    if style.noise_std <= 0.0 {
        return;
    }
    for v in values.iter_mut() {
        let n: f32 = StandardNormal.sample(rng);
        *v = if style.speckle {
            *v * (1.0 + style.noise_std * n)
        } else {
            *v + style.noise_std * n
        };
    }
}

/// One phantom rendered in both domains, with its lesion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub mask: SegMask,
}

/// A phantom with low-resolution images and masks at two resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResPair {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub mask_lr: SegMask,
    pub mask_hr: SegMask,
}

const GEOMETRY_STREAM: u64 = 0;
const NOISE_A_STREAM: u64 = 1;
const NOISE_B_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_geometry(seed: u64, params: &PhantomParams) -> Result<Geometry> {
    params.validate()?;
    let mut rng = rng_for(seed, GEOMETRY_STREAM);
    let (lo, hi) = params.lesion_fraction;
    for _ in 0..params.max_attempts {
        let geom = Geometry::sample(&mut rng, params);
        if geom.lesions.is_empty() {
            return Ok(geom);
        }
        let regions = geom.regions(params.resolution);
        let frac = regions.iter().filter(|r| **r == Region::Lesion).count() as f64
            / regions.len() as f64;
        if (lo..=hi).contains(&frac) {
            return Ok(geom);
        }
    }
    Err(Error::Generation(format!(
        "no phantom with lesion fraction in [{lo}, {hi}] after {} attempts (seed {seed})",
        params.max_attempts
    )))
}

fn textured(
    values: Vec<f32>,
    style: &DomainStyle,
    seed: u64,
    stream: u64,
    res: usize,
    domain: Domain,
) -> Result<GrayImage> {
    let mut values = values;
    apply_texture(&mut values, style, &mut rng_for(seed, stream));
    GrayImage::from_clamped(res, res, values, domain)
}

/// Renders phantom `seed` at `params.resolution` in both domains.
pub fn make_synthetic_pair(seed: u64, params: &PhantomParams) -> Result<SyntheticPair> {
    let geom = sample_geometry(seed, params)?;
    let res = params.resolution;
    let regions = geom.regions(res);
    Ok(SyntheticPair {
        image_a: textured(
            render_clean(&regions, &params.style_a),
            &params.style_a,
            seed,
            NOISE_A_STREAM,
            res,
            Domain::SynthA,
        )?,
        image_b: textured(
            render_clean(&regions, &params.style_b),
            &params.style_b,
            seed,
            NOISE_B_STREAM,
            res,
            Domain::SynthB,
        )?,
        mask: mask_from_regions(&regions, res)?,
    })
}

/// Renders at `params.resolution · hr_scale`, area-averages down to
/// `params.resolution`, then applies texture at the low resolution.
///
/// The high-resolution mask is the segmentation target for super-resolution
/// training; the low-resolution mask is its nearest-neighbour reduction.
pub fn make_multires_pair(seed: u64, params: &PhantomParams, hr_scale: usize) -> Result<MultiResPair> {
    if hr_scale == 0 || !hr_scale.is_power_of_two() {
        return Err(Error::Generation(format!(
            "hr_scale {hr_scale} must be a power of two"
        )));
    }
    let geom = sample_geometry(seed, params)?;
    let res = params.resolution;
    let hr = res * hr_scale;
    let regions = geom.regions(hr);
    let mask_hr = mask_from_regions(&regions, hr)?;
    let render = |style: &DomainStyle, stream, domain| -> Result<GrayImage> {
        let clean = GrayImage::from_clamped(hr, hr, render_clean(&regions, style), domain)?;
        let low = area_downsample(&clean, hr_scale)?;
        textured(low.into_pixels(), style, seed, stream, res, domain)
    };
    Ok(MultiResPair {
        image_a: render(&params.style_a, NOISE_A_STREAM, Domain::SynthA)?,
        image_b: render(&params.style_b, NOISE_B_STREAM, Domain::SynthB)?,
        mask_lr: mask_hr.resample((res, res))?,
        mask_hr,
    })
}
