//! Pretraining objectives. All functions are generic over the float dtype
//! of their inputs so they can be checked in f64.

use candle_core::{DType, Tensor, D};
use candle_nn::ops::log_softmax;

use crate::error::{Error, Result};

pub const NUM_ROTATIONS: usize = 4;

fn one_hot(labels: &[u8], classes: usize, like: &Tensor) -> Result<Tensor> {
    let mut data = vec![0f32; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l as usize] = 1.0;
    }
    Ok(Tensor::from_vec(data, (labels.len(), classes), like.device())?.to_dtype(like.dtype())?)
}

/// Mean categorical cross-entropy of `(B, 4)` rotation logits against
/// quarter-turn labels, `−log softmax(logits)[label]`.
pub fn rotation_loss(logits: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    if k != NUM_ROTATIONS || b != labels.len() {
        return Err(Error::Dimension(format!(
            "rotation logits {:?} do not match {} labels",
            logits.dims(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|l| **l as usize >= NUM_ROTATIONS) {
        return Err(Error::Validation(format!("rotation label {bad} outside 0..=3")));
    }
    let target = one_hot(labels, NUM_ROTATIONS, logits)?;
    let nll = (log_softmax(logits, D::Minus1)? * target)?.sum(D::Minus1)?.neg()?;
    Ok(nll.mean_all()?)
}

/// Scalar convenience form of [`rotation_loss`] for a single prediction.
pub fn rotation_loss_single(logits: [f64; 4], label: u8) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("rotation logits must be finite".into()));
    }
    let t = Tensor::new(&[logits], &candle_core::Device::Cpu)?;
    Ok(rotation_loss(&t, &[label])?.to_scalar::<f64>()?)
}

/// L1 reconstruction error.
///
/// With `weights = None` this is the mean absolute error over every pixel.
/// With pixel weights (1 inside masked patches) it averages over the masked
/// region only, returning 0 when nothing is masked.
pub fn mim_loss(recon: &Tensor, target: &Tensor, weights: Option<&Tensor>) -> Result<Tensor> {
    if recon.dims() != target.dims() {
        return Err(Error::Dimension(format!(
            "reconstruction {:?} and target {:?} differ in shape",
            recon.dims(),
            target.dims()
        )));
    }
    let abs = (recon - target)?.abs()?;
    match weights {
        None => Ok(abs.mean_all()?),
        Some(w) => {
            let w = w.to_dtype(abs.dtype())?.broadcast_as(abs.shape())?;
            let total = w.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if total == 0.0 {
                return Ok(abs.sum_all()?.affine(0.0, 0.0)?);
            }
            Ok((abs * w)?.sum_all()?.affine(1.0 / total, 0.0)?)
        }
    }
}

/// Rows scaled to unit L2 norm.
pub fn l2_normalize_rows(z: &Tensor) -> Result<Tensor> {
    let norm = z.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?.clamp(1e-12, f64::MAX)?;
    Ok(z.broadcast_div(&norm)?)
}

/// NT-Xent over `2N` embeddings from two views.
///
/// Rows are L2-normalized internally. For anchor `i` the positive is its
/// cross-view partner; every other embedding except the anchor itself is a
/// negative. Returns the mean per-anchor loss.
pub fn contrastive_loss(z1: &Tensor, z2: &Tensor, temperature: f64) -> Result<Tensor> {
    let (n, d) = z1.dims2()?;
    if z2.dims() != [n, d] {
        return Err(Error::Dimension(format!(
            "view embeddings {:?} and {:?} differ in shape",
            z1.dims(),
            z2.dims()
        )));
    }
    if n < 2 {
        return Err(Error::Validation(format!(
            "contrastive loss needs at least 2 pairs, got {n}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let z = Tensor::cat(&[l2_normalize_rows(z1)?, l2_normalize_rows(z2)?], 0)?;
    let sim = (z.matmul(&z.t()?)? / temperature)?;
    let m = 2 * n;
    let mut self_mask = vec![0f32; m * m];
    let mut partner = vec![0u8; m * m];
    for i in 0..m {
        self_mask[i * m + i] = -1e9;
        partner[i * m + (i + n) % m] = 1;
    }
    let self_mask = Tensor::from_vec(self_mask, (m, m), z.device())?.to_dtype(sim.dtype())?;
    let positives = Tensor::from_vec(partner, (m, m), z.device())?.to_dtype(sim.dtype())?;
    let logp = log_softmax(&(sim + self_mask)?, D::Minus1)?;
    Ok((logp * positives)?.sum(D::Minus1)?.neg()?.mean_all()?)
}
