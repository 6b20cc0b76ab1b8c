use crate::error::{Error, Result};
use crate::tensor::{IdTensor, Scalar, Tensor};

/// Max-subtracted softmax of one row, in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Mean negative log-likelihood over the positions where `mask` is set.
///
/// `logits` has one row of `classes` scores per position of `targets`.
/// Returns the loss and its gradient with respect to `logits`; unmasked rows
/// get a zero gradient.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &IdTensor,
    mask: &[bool],
) -> Result<(T, Tensor<T>)> {
    let classes = logits.last_dim();
    let positions = targets.data().len();
    if classes == 0 || logits.len() != positions * classes || mask.len() != positions {
        return Err(Error::shape(format!(
            "logits {:?} vs {positions} targets and {} mask entries",
            logits.shape(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let scale = T::one() / T::from_f64(count as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    for (pos, (&target, &on)) in targets.data().iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        let target = target as usize;
        if target >= classes {
            return Err(Error::Index { index: target, rows: classes });
        }
        let row = &logits.data()[pos * classes..(pos + 1) * classes];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let g = &mut grad[pos * classes..(pos + 1) * classes];
        let mut sum = T::zero();
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - max).exp();
            sum = sum + *gv;
        }
        total += (sum.ln() - (row[target] - max)).as_f64();
        for gv in g.iter_mut() {
            *gv = *gv / sum * scale;
        }
        g[target] = g[target] - scale;
    }
    let loss = T::from_f64(total / count as f64);
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f64>::zeros(&[1, 1, 4]);
        let targets = IdTensor::new(1, 1, vec![2]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &targets, &[true]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((4f64.ln() - 1.3863).abs() < 1e-4);
        assert_eq!(grad.data(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn dominant_target_drives_loss_to_zero() {
        let mut v = vec![0.0f64; 5];
        v[3] = 50.0;
        let logits = Tensor::from_vec(&[1, 5], v).unwrap();
        let targets = IdTensor::new(1, 1, vec![3]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &targets, &[true]).unwrap();
        assert!((0.0..1e-20).contains(&loss));
    }

    #[test]
    fn two_class_matches_log_sum_exp() {
        let (a, b) = (0.7312f64, -1.2044f64);
        let logits = Tensor::from_vec(&[2, 2], vec![a, b, 9.0, 9.0]).unwrap();
        let targets = IdTensor::new(2, 1, vec![1, 0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &targets, &[true, false]).unwrap();
        let lse = (a.exp() + b.exp()).ln();
        assert!((loss - (lse - b)).abs() < 1e-12);
        assert_eq!(&grad.data()[2..], &[0.0, 0.0]);
        let pb = b.exp() / (a.exp() + b.exp());
        assert!((grad.data()[1] - (pb - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn averages_over_masked_positions() {
        let logits = Tensor::<f64>::zeros(&[3, 2]);
        let targets = IdTensor::new(1, 3, vec![0, 1, 1]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &targets, &[true, true, false]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad.data(), &[-0.25, 0.25, 0.25, -0.25, 0.0, 0.0]);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 3]);
        let targets = IdTensor::new(1, 2, vec![1, 2]).unwrap();
        assert!(matches!(softmax_cross_entropy(&logits, &targets, &[false, false]), Err(Error::EmptyMask)));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row: Vec<f32> = (0..101).map(|i| ((i * 37 % 11) as f32 - 5.0) * 3.0).collect();
        softmax_in_place(&mut row);
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
