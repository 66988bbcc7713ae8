use candle_core::{DType, Tensor, D};
use candle_nn::ops::{log_softmax, softmax};

use crate::error::{Error, Result};

/// Additive smoothing of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// `(N, H, W)` integer labels → `(N, C, H, W)` indicator in `like`'s dtype.
pub fn one_hot_labels(labels: &Tensor, classes: usize, like: &Tensor) -> Result<Tensor> {
    let ids = Tensor::arange(0u32, classes as u32, labels.device())?.reshape((1, classes, 1, 1))?;
    Ok(labels
        .to_dtype(DType::U32)?
        .unsqueeze(1)?
        .broadcast_eq(&ids)?
        .to_dtype(like.dtype())?)
}

fn check_shapes(logits: &Tensor, labels: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = logits.dims4()?;
    if labels.dims() != [n, h, w] {
        return Err(Error::Dimension(format!(
            "logits {:?} and mask {:?} differ in resolution",
            logits.dims(),
            labels.dims()
        )));
    }
    Ok((n, c, h, w))
}

/// `1 − soft Dice` over the foreground classes, computed per sample and
/// foreground class from softmax probabilities, then averaged.
pub fn dice_loss(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = check_shapes(logits, labels)?;
    let probs = softmax(logits, 1)?.narrow(1, 1, c - 1)?;
    let target = one_hot_labels(labels, c, logits)?.narrow(1, 1, c - 1)?;
    let inter = (&probs * &target)?.sum(D::Minus1)?.sum(D::Minus1)?;
    let denom = (probs.sum(D::Minus1)?.sum(D::Minus1)? + target.sum(D::Minus1)?.sum(D::Minus1)?)?;
    let dice = ((inter * 2.0)? + DICE_EPS)?.div(&(denom + DICE_EPS)?)?;
    Ok(dice.mean_all()?.affine(-1.0, 1.0)?)
}

/// Pixelwise categorical cross-entropy, averaged over every pixel.
pub fn cross_entropy_loss(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (_, c, _, _) = check_shapes(logits, labels)?;
    let target = one_hot_labels(labels, c, logits)?;
    let nll = (log_softmax(logits, 1)? * target)?.sum(1)?.neg()?;
    Ok(nll.mean_all()?)
}

/// Dice plus cross-entropy with equal weights.
pub fn loss_segmentation(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    Ok((dice_loss(logits, labels)? + cross_entropy_loss(logits, labels)?)?)
}
