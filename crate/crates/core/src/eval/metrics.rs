use crate::data::SegMask;
use crate::error::{Error, Result};

/// Foreground overlap `2|A∩B| / (|A| + |B|)`, where foreground is any
/// nonzero label. Two empty masks agree perfectly and score 1.
pub fn dsc(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    if pred.resolution() != gt.resolution() {
        return Err(Error::Dimension(format!(
            "prediction {:?} and ground truth {:?} differ in resolution",
            pred.resolution(),
            gt.resolution()
        )));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p != 0, g != 0);
        a += usize::from(p);
        b += usize::from(g);
        both += usize::from(p && g);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample (`n − 1`) standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> SegMask {
        SegMask::new(1, bits.len(), bits.to_vec(), 2).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let a = mask(&[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1, 0, 0]);
        let c = mask(&[0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &c).unwrap(), 0.0);
        assert_eq!(dsc(&a, &b).unwrap(), 0.5);
        let empty = mask(&[0; 8]);
        assert_eq!(dsc(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dsc(&empty, &a).unwrap(), 0.0);
    }

    #[test]
    fn dsc_resolution_mismatch() {
        assert!(dsc(&mask(&[0; 4]), &mask(&[0; 8])).is_err());
    }

    #[test]
    fn std_is_sample_std() {
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[0.7]), 0.0);
    }
}
