//! Multi-task self-supervised pretraining: rotation prediction, masked image
//! modeling and contrastive learning over two augmented views.

pub mod augment;
pub mod losses;
pub mod pretrain;

pub use augment::{augment_view, random_mask, rotate, AugmentConfig, AugmentedView, PatchMask};
pub use losses::{contrastive_loss, mim_loss, rotation_loss, rotation_loss_single};
pub use pretrain::{LossWeights, SslBatchLoss, SslConfig, SslHeads, SslPretrainer, SSL_PREFIX};
