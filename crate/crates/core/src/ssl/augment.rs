//! The two-view augmentation engine: exact 90° rotations followed by random
//! patch masking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GrayImage;
use crate::error::{Error, Result};

/// Counterclockwise rotation by `k · 90°`. A pure permutation of pixels.
pub fn rotate(img: &GrayImage, k: u8) -> Result<GrayImage> {
    if !img.is_square() {
        return Err(Error::Dimension(format!(
            "rotation needs a square image, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let n = img.height();
    let k = k % 4;
    let src = |y: usize, x: usize| -> (usize, usize) {
        match k {
            0 => (y, x),
            1 => (x, n - 1 - y),
            2 => (n - 1 - y, n - 1 - x),
            _ => (n - 1 - x, y),
        }
    };
    let pixels = (0..n * n)
        .map(|i| {
            let (sy, sx) = src(i / n, i % n);
            img.get(sy, sx)
        })
        .collect();
    GrayImage::new(n, n, pixels, img.domain())
}

/// Which patches of a `rows × cols` patch grid were masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    pub flags: Vec<bool>,
}

impl PatchMask {
    pub fn num_patches(&self) -> usize {
        self.flags.len()
    }

    pub fn masked_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn fraction(&self) -> f64 {
        self.masked_count() as f64 / self.num_patches() as f64
    }

    pub fn is_masked(&self, y: usize, x: usize) -> bool {
        self.flags[(y / self.patch_size) * self.cols + x / self.patch_size]
    }

    /// Pixel-level indicator (1.0 inside masked patches).
    pub fn pixel_weights(&self) -> Vec<f32> {
        let (h, w) = (self.rows * self.patch_size, self.cols * self.patch_size);
        (0..h * w)
            .map(|i| f32::from(u8::from(self.is_masked(i / w, i % w))))
            .collect()
    }
}

/// Number of patches masked at `rate`: `round(rate · num_patches)`.
pub fn masked_patch_count(rate: f64, num_patches: usize) -> usize {
    (rate * num_patches as f64).round() as usize
}

/// Masks exactly `round(rate · num_patches)` patches, chosen uniformly
/// without replacement, by overwriting them with `fill`.
pub fn random_mask(
    img: &GrayImage,
    rate: f64,
    patch_size: usize,
    fill: f32,
    seed: u64,
) -> Result<(GrayImage, PatchMask)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("mask rate {rate} outside [0, 1]")));
    }
    let (h, w) = img.resolution();
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::Dimension(format!(
            "patch size {patch_size} does not divide {h}x{w}"
        )));
    }
    let (rows, cols) = (h / patch_size, w / patch_size);
    let n = rows * cols;
    let count = masked_patch_count(rate, n);
    let mut flags = vec![false; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, n, count) {
        flags[i] = true;
    }
    let mask = PatchMask {
        rows,
        cols,
        patch_size,
        flags,
    };
    let pixels = img
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.is_masked(i / w, i % w) { fill } else { v })
        .collect();
    Ok((GrayImage::new(h, w, pixels, img.domain())?, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mask_rate: f64,
    pub patch_size: usize,
    pub fill: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.45,
            patch_size: 8,
            fill: 0.0,
        }
    }
}

/// One augmented view of an input image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    /// The rotated image before masking.
    pub rotated: GrayImage,
    /// The rotated image after masking; this is what the encoder sees.
    pub masked: GrayImage,
    /// Rotation in quarter turns, 0..=3.
    pub rotation_label: u8,
    pub mask_map: PatchMask,
}

/// Draws a uniform rotation, rotates, then masks.
///
/// Calling this twice with independent seeds yields the two views of a
/// contrastive pair.
pub fn augment_view(img: &GrayImage, cfg: &AugmentConfig, seed: u64) -> Result<AugmentedView> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k: u8 = rng.gen_range(0..4);
    let mask_seed: u64 = rng.gen();
    let rotated = rotate(img, k)?;
    let (masked, mask_map) = random_mask(&rotated, cfg.mask_rate, cfg.patch_size, cfg.fill, mask_seed)?;
    Ok(AugmentedView {
        rotated,
        masked,
        rotation_label: k,
        mask_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    fn ramp(n: usize) -> GrayImage {
        let px = (0..n * n).map(|i| i as f32 / (n * n) as f32).collect();
        GrayImage::new(n, n, px, Domain::Lge).unwrap()
    }

    #[test]
    fn rotate_quarter_turn_2x2() {
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        let img = GrayImage::new(2, 2, vec![a, b, c, d], Domain::Lge).unwrap();
        assert_eq!(rotate(&img, 1).unwrap().pixels(), &[b, d, a, c]);
        assert_eq!(rotate(&img, 0).unwrap(), img);
    }

    #[test]
    fn rotate_group_laws() {
        let x = ramp(6);
        let r1 = rotate(&x, 1).unwrap();
        assert_eq!(rotate(&r1, 1).unwrap(), rotate(&x, 2).unwrap());
        let mut y = x.clone();
        for _ in 0..4 {
            y = rotate(&y, 1).unwrap();
        }
        assert_eq!(y, x);
    }

    #[test]
    fn rotate_rejects_non_square() {
        let img = GrayImage::filled(2, 4, 0.0, Domain::Lge).unwrap();
        assert!(matches!(rotate(&img, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn mask_rate_extremes() {
        let x = ramp(16);
        let (y, m) = random_mask(&x, 0.0, 4, 0.0, 1).unwrap();
        assert_eq!(y, x);
        assert!(m.flags.iter().all(|f| !f));
        let (y, m) = random_mask(&x, 1.0, 4, 0.0, 1).unwrap();
        assert!(y.pixels().iter().all(|&v| v == 0.0));
        assert!(m.flags.iter().all(|f| *f));
    }

    #[test]
    fn mask_count_rounds() {
        let x = ramp(64);
        for seed in 0..20 {
            let (_, m) = random_mask(&x, 0.45, 8, 0.0, seed).unwrap();
            assert_eq!(m.num_patches(), 64);
            assert_eq!(m.masked_count(), 29);
        }
    }

    #[test]
    fn mask_patch_must_divide() {
        assert!(matches!(
            random_mask(&ramp(10), 0.5, 3, 0.0, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn masked_equals_rotated_outside_patches() {
        let cfg = AugmentConfig::default();
        let v = augment_view(&ramp(32), &cfg, 77).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let expect = if v.mask_map.is_masked(y, x) {
                    cfg.fill
                } else {
                    v.rotated.get(y, x)
                };
                assert_eq!(v.masked.get(y, x), expect);
            }
        }
    }

    #[test]
    fn view_is_deterministic() {
        let cfg = AugmentConfig::default();
        let x = ramp(16);
        assert_eq!(augment_view(&x, &cfg, 5).unwrap(), augment_view(&x, &cfg, 5).unwrap());
    }

    #[test]
    fn identity_view_for_zero_rotation_and_rate() {
        let cfg = AugmentConfig {
            mask_rate: 0.0,
            ..Default::default()
        };
        let x = ramp(16);
        let seed = (0..100)
            .find(|&s| augment_view(&x, &cfg, s).unwrap().rotation_label == 0)
            .unwrap();
        let v = augment_view(&x, &cfg, seed).unwrap();
        assert_eq!(v.masked, x);
        assert_eq!(v.rotated, x);
    }
}
