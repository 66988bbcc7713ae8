//! Unpaired style transfer with mask-consistency losses from a frozen
//! segmentor.

pub mod losses;
pub mod networks;
pub mod train;

pub use losses::{loss_recon_seg, loss_transfer_seg, mask_mse};
pub use networks::{PatchDiscriminator, ResnetGenerator, Segmentor};
pub use train::{
    pretrain_segmentor, translate_image, ImagePair, SegPretrainConfig, SegPretrainReport, StyleConfig, StyleLossReport, StyleModels,
    StyleTrainer, G_ST_PREFIX, SEG_PREFIX,
};
