//! Label smoothing and smoothed cross-entropy with analytic gradient.

use super::tensor::Tensor;
use super::{NnError, Scalar};

/// Smoothed target distribution for a one-hot class:
/// y_k = (1−α)·1[k = class] + α/K.
pub fn smooth_labels<T: Scalar>(class: usize, alpha: T, k: usize) -> Vec<T> {
    assert!(class < k, "class {class} out of range for K={k}");
    let base = alpha / T::from_f64(k as f64);
    let mut y = vec![base; k];
    y[class] = (T::one() - alpha) + base;
    y
}

/// Row-wise numerically-stable softmax (subtract row max; fixed index-order
/// summation).
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, k) = logits
        .try_dims2()
        .map_err(|detail| NnError::ShapeMismatch { op: "softmax_rows", detail })?;
    let mut out = Tensor::zeros(vec![n, k]);
    for row in 0..n {
        let src = &logits.data()[row * k..(row + 1) * k];
        let dst = &mut out.data_mut()[row * k..(row + 1) * k];
        let mut mx = src[0];
        for &v in &src[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            let e = (v - mx).exp();
            *d = e;
            sum = sum + e;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    Ok(out)
}

/// Mean smoothed cross-entropy over the batch and its gradient w.r.t. the
/// logits: loss = mean_i −Σ_k y_LS_k · log softmax(z_i)_k,
/// grad = (softmax − y_LS)/N.
pub fn cross_entropy_smoothed<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
    alpha: T,
) -> Result<(T, Tensor<T>), NnError> {
    let (n, k) = logits
        .try_dims2()
        .map_err(|detail| NnError::ShapeMismatch { op: "cross_entropy_smoothed", detail })?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            op: "cross_entropy_smoothed",
            detail: format!("{n} logit rows but {} labels", labels.len()),
        });
    }
    if n == 0 {
        return Err(NnError::EmptySampleSet { detail: "loss over zero samples".into() });
    }
    if !logits.is_finite() {
        return Err(NnError::NonFiniteLogits);
    }
    let n_t = T::from_f64(n as f64);
    let base = alpha / T::from_f64(k as f64);
    let hot = (T::one() - alpha) + base;
    let mut grad = Tensor::zeros(vec![n, k]);
    let mut loss = T::zero();
    for row in 0..n {
        let label = labels[row] as usize;
        if label >= k {
            return Err(NnError::ShapeMismatch {
                op: "cross_entropy_smoothed",
                detail: format!("label {label} out of range for K={k}"),
            });
        }
        let src = &logits.data()[row * k..(row + 1) * k];
        let mut mx = src[0];
        for &v in &src[1..] {
            if v > mx {
                mx = v;
            }
        }
        // log-sum-exp with the row max subtracted
        let mut sum = T::zero();
        for &v in src {
            sum = sum + (v - mx).exp();
        }
        let lse = mx + sum.ln();
        let mut row_loss = T::zero();
        let g = &mut grad.data_mut()[row * k..(row + 1) * k];
        for (col, (&z, gv)) in src.iter().zip(g.iter_mut()).enumerate() {
            let y = if col == label { hot } else { base };
            let logp = z - lse;
            row_loss = row_loss - y * logp;
            let p = (z - mx).exp() / sum;
            *gv = (p - y) / n_t;
        }
        loss = loss + row_loss;
    }
    loss = loss / n_t;
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLogits);
    }
    Ok((loss, grad))
}

/// Index of the row maximum; ties pick the lowest index.
pub fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothed_one_hot_exact_in_f64() {
        let y = smooth_labels::<f64>(0, 0.1, 5);
        assert_eq!(y, vec![0.92, 0.02, 0.02, 0.02, 0.02]);
        let s: f64 = y.iter().sum();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn alpha_zero_is_identity_and_alpha_one_is_uniform() {
        assert_eq!(smooth_labels::<f64>(2, 0.0, 5), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(smooth_labels::<f64>(1, 1.0, 5), vec![0.2; 5]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_k() {
        let logits = Tensor::zeros(vec![3, 5]);
        let (loss, grad) = cross_entropy_smoothed::<f64>(&logits, &[0, 3, 4], 0.1).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-9, "loss {loss}");
        // Gradient rows sum to zero: Σ(p − y)/n with Σp = Σy = 1.
        for row in 0..3 {
            let s: f64 = grad.data()[row * 5..(row + 1) * 5].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn peaked_logits_drive_loss_to_zero_when_unsmoothed() {
        let mut logits = Tensor::zeros(vec![1, 5]);
        logits.data_mut()[2] = 100.0f64;
        let (loss, _) = cross_entropy_smoothed(&logits, &[2], 0.0).unwrap();
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn softmax_rows_sum_to_one_and_survive_big_logits() {
        let logits = Tensor::new(vec![2, 3], vec![1000.0f64, 999.0, 998.0, -1000.0, -1000.0, -1000.0]);
        let p = softmax_rows(&logits).unwrap();
        for row in 0..2 {
            let s: f64 = p.data()[row * 3..(row + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(p.is_finite());
    }

    #[test]
    fn non_finite_logits_rejected() {
        let logits = Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]);
        assert!(matches!(cross_entropy_smoothed(&logits, &[0], 0.1), Err(NnError::NonFiniteLogits)));
    }

    #[test]
    fn argmax_ties_prefer_lowest() {
        assert_eq!(argmax_row(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_row(&[5.0f32]), 0);
    }
}
