//! Images, masks, datasets and the synthetic phantom generator.

pub mod dataset;
pub mod image;
pub mod phantom;

pub use dataset::{load_dataset, DatasetIndex, DatasetSpec, IndexRecord, Sample, Split};
pub use image::{
    area_downsample, downsample_lge, normalize, Domain, GrayImage, Normalized, Resample, SegMask,
};
pub use phantom::{make_multires_pair, make_synthetic_pair, DomainStyle, MultiResPair, PhantomParams, SyntheticPair};
