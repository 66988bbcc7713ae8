//! Super-resolution segmentation network.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod loss;
pub mod model;
pub mod swin;
pub mod train;

pub use config::{Backbone, EncoderConfig, SSegConfig, StageShape};
pub use encoder::{Encoder, FeaturePyramid};
pub use loss::{cross_entropy_loss, dice_loss, loss_segmentation};
pub use model::{EncoderLoadReport, SSegNet};
pub use train::SSegTrainer;
