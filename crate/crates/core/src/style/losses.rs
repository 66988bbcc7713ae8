use candle_core::Tensor;

use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared difference over every pixel and class of two probability maps.
pub fn mask_mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mask MSE")?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Segmentation drift between the translated image and the original target
/// image, both seen through the segmentor.
pub fn loss_transfer_seg(mask_trans: &Tensor, mask_ori: &Tensor) -> Result<Tensor> {
    mask_mse(mask_trans, mask_ori)
}

/// Segmentation drift between the round-trip reconstruction and the original.
pub fn loss_recon_seg(mask_recon: &Tensor, mask_ori: &Tensor) -> Result<Tensor> {
    mask_mse(mask_recon, mask_ori)
}

/// Least-squares adversarial loss against a constant target.
pub fn lsgan(scores: &Tensor, real: bool) -> Result<Tensor> {
    let target = if real { 1.0 } else { 0.0 };
    Ok(scores.affine(1.0, -target)?.sqr()?.mean_all()?)
}

/// Mean absolute error.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "L1")?;
    Ok((a - b)?.abs()?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn ones_vs_zeros_is_one() {
        let a = Tensor::ones((1, 2, 3, 3), DType::F64, &Device::Cpu).unwrap();
        let b = a.zeros_like().unwrap();
        let v = loss_transfer_seg(&a, &b).unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(loss_recon_seg(&a, &a).unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn lsgan_targets() {
        let s = Tensor::new(&[0.5f64, 1.5], &Device::Cpu).unwrap();
        assert_eq!(lsgan(&s, true).unwrap().to_scalar::<f64>().unwrap(), 0.25);
        assert_eq!(lsgan(&s, false).unwrap().to_scalar::<f64>().unwrap(), 1.25);
    }
}
