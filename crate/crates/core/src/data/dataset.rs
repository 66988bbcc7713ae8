//! On-disk dataset contract: an `index.json` manifest next to image and mask
//! files.
//!
//! Images are 8/16-bit grayscale PNG or `.raw` float arrays; masks are 8-bit
//! PNG whose pixel values are class labels.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{normalize, Domain, GrayImage, SegMask};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One manifest record. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub id: String,
    pub domain: Domain,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    #[serde(default = "default_classes")]
    pub num_classes: u8,
    /// Resolution of high-resolution masks, when masks are not at image size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_resolution: Option<(usize, usize)>,
    /// Seed used when the splits were assigned.
    #[serde(default)]
    pub split_seed: u64,
    pub records: Vec<IndexRecord>,
}

fn default_classes() -> u8 {
    SegMask::DEFAULT_CLASSES
}

impl DatasetIndex {
    pub fn empty() -> Self {
        Self {
            num_classes: default_classes(),
            target_resolution: None,
            split_seed: 0,
            records: Vec::new(),
        }
    }
}

/// A dataset root plus its parsed manifest.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl DatasetSpec {
    /// Reads and validates `root/index.json`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e))?;
        let index: DatasetIndex =
            serde_json::from_str(&text).map_err(|e| Error::load(&path, e))?;
        let spec = Self { root, index };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks referenced files and pair-id linkage.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeMap::new();
        let mut pairs: BTreeMap<&str, Vec<&IndexRecord>> = BTreeMap::new();
        for rec in &self.index.records {
            if ids.insert(rec.id.as_str(), ()).is_some() {
                return Err(Error::Validation(format!("duplicate sample id `{}`", rec.id)));
            }
            for p in std::iter::once(&rec.image_path).chain(rec.mask_path.as_ref()) {
                let full = self.root.join(p);
                if !full.is_file() {
                    return Err(Error::load(full, "file not found"));
                }
            }
            if let Some(pid) = &rec.pair_id {
                pairs.entry(pid.as_str()).or_default().push(rec);
            }
        }
        for (pid, recs) in pairs {
            if recs.len() != 2 || recs[0].domain == recs[1].domain {
                return Err(Error::Validation(format!(
                    "pair id `{pid}` must link exactly two entries in different domains"
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        let text = serde_json::to_string_pretty(&self.index)?;
        fs::write(self.root.join(INDEX_FILE), text + "\n")?;
        Ok(())
    }
}

/// A loaded image with its optional mask and pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: Option<SegMask>,
    pub pair_id: Option<String>,
    pub split: Split,
}

/// Loads every record, normalizing images; output is sorted by sample id.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    let mut records: Vec<&IndexRecord> = spec.index.records.iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    records
        .into_iter()
        .map(|rec| {
            let image_path = spec.root.join(&rec.image_path);
            let image = read_image(&image_path, rec.domain)?;
            let mask = rec
                .mask_path
                .as_ref()
                .map(|p| read_mask(&spec.root.join(p), spec.index.num_classes))
                .transpose()?;
            if let Some(m) = &mask {
                let ok = m.resolution() == image.resolution()
                    || Some(m.resolution()) == spec.index.target_resolution;
                if !ok {
                    return Err(Error::Validation(format!(
                        "sample `{}`: mask resolution {:?} matches neither the image {:?} nor the target {:?}",
                        rec.id,
                        m.resolution(),
                        image.resolution(),
                        spec.index.target_resolution
                    )));
                }
            }
            Ok(Sample {
                id: rec.id.clone(),
                image,
                mask,
                pair_id: rec.pair_id.clone(),
                split: rec.split,
            })
        })
        .collect()
}

const RAW_MAGIC: &str = "RAW";

/// Reads an image and min-max normalizes it.
pub fn read_image(path: &Path, domain: Domain) -> Result<GrayImage> {
    let (h, w, values) = if path.extension().is_some_and(|e| e == "raw") {
        read_raw(path)?
    } else {
        let img = image::open(path).map_err(|e| Error::load(path, e))?;
        let luma = img.to_luma16();
        let (w, h) = luma.dimensions();
        let values = luma.into_raw().into_iter().map(|v| v as f32).collect();
        (h as usize, w as usize, values)
    };
    let norm = normalize(&values, h, w, domain)?;
    if norm.constant {
        log::warn!("{} is constant", path.display());
    }
    Ok(norm.image)
}

/// `.raw` layout: ASCII header `RAW <f32|f64> <height> <width>\n`, then
/// little-endian samples in row-major order.
pub fn read_raw(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let file = fs::File::open(path).map_err(|e| Error::load(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::load(path, e))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad = |why: &str| Error::load(path, format!("bad raw header `{}`: {why}", header.trim()));
    if parts.len() != 4 || parts[0] != RAW_MAGIC {
        return Err(bad("expected `RAW <dtype> <height> <width>`"));
    }
    let h: usize = parts[2].parse().map_err(|_| bad("height"))?;
    let w: usize = parts[3].parse().map_err(|_| bad("width"))?;
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::load(path, e))?;
    let values: Vec<f32> = match parts[1] {
        "f32" => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        "f64" => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        _ => return Err(bad("dtype must be f32 or f64")),
    };
    if values.len() != h * w {
        return Err(bad("payload size does not match dimensions"));
    }
    Ok((h, w, values))
}

pub fn write_raw(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "{RAW_MAGIC} f32 {height} {width}\n")?;
    for v in values {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_mask(path: &Path, num_classes: u8) -> Result<SegMask> {
    let img = image::open(path).map_err(|e| Error::load(path, e))?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    SegMask::new(h as usize, w as usize, luma.into_raw(), num_classes)
}

/// Writes `[0, 1]` intensities as a 16-bit grayscale PNG.
pub fn write_image_png(path: &Path, img: &GrayImage) -> Result<()> {
    let data: Vec<u16> = img
        .pixels()
        .iter()
        .map(|v| (v * 65535.0).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        img.width() as u32,
        img.height() as u32,
        data,
    )
    .expect("buffer size matches dimensions");
    buf.save(path)?;
    Ok(())
}

/// Writes labels as an 8-bit PNG.
pub fn write_mask_png(path: &Path, mask: &SegMask) -> Result<()> {
    let buf = image::GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.labels().to_vec(),
    )
    .expect("buffer size matches dimensions");
    buf.save(path)?;
    Ok(())
}

/// Seeded train/val/test assignment by shuffled position.
pub fn assign_splits(n: usize, fractions: (f64, f64), seed: u64) -> Vec<Split> {
    let order = shuffled_indices(n, seed);
    let n_train = (fractions.0 * n as f64).round() as usize;
    let n_val = ((fractions.1 * n as f64).round() as usize).min(n - n_train.min(n));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Deterministic per-epoch visiting order for `n` samples.
pub fn epoch_order(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}
