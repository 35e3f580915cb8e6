//! Activation, pooling, and fully-connected layers (forward + backward).

use super::gemm::{gemm_nn, transpose};
use super::tensor::Tensor;
use super::{NnError, Scalar};

/// ReLU applied in place.
pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// ReLU gradient: zero `g` wherever the saved *output* is zero. (For ReLU,
/// y > 0 exactly where x > 0, so the output doubles as the mask and the
/// pre-activation does not need to be kept.)
pub fn relu_backward_inplace<T: Scalar>(y: &Tensor<T>, g: &mut Tensor<T>) {
    assert_eq!(y.shape(), g.shape(), "relu_backward: shape mismatch");
    for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
        if yv <= T::zero() {
            *gv = T::zero();
        }
    }
}

/// Max pooling. Returns the pooled tensor and the flat input index of each
/// selected element (used by the backward pass). Ties pick the earliest
/// index in row-major window order, so results are deterministic.
pub fn maxpool2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let (n, c, h, w) =
        x.try_dims4().map_err(|detail| NnError::ShapeMismatch { op: "maxpool2d", detail })?;
    if h + 2 * pad < kernel || w + 2 * pad < kernel {
        return Err(NnError::ShapeMismatch {
            op: "maxpool2d",
            detail: format!("kernel {kernel} exceeds padded input {h}x{w} (pad {pad})"),
        });
    }
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let mut y = Tensor::zeros(vec![n, c, oh, ow]);
    let mut idx = vec![0u32; n * c * oh * ow];
    let yd = y.data_mut();
    for img in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            let out_base = (img * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for r in 0..kernel {
                        let iy = (oy * stride + r) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for q in 0..kernel {
                            let ix = (ox * stride + q) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if plane[i] > best {
                                best = plane[i];
                                best_i = i;
                            }
                        }
                    }
                    yd[out_base + oy * ow + ox] = best;
                    idx[out_base + oy * ow + ox] = ((img * c + ch) * h * w + best_i) as u32;
                }
            }
        }
    }
    Ok((y, idx))
}

/// Scatter pooled gradients back to the argmax positions.
pub fn maxpool2d_backward<T: Scalar>(idx: &[u32], gout: &Tensor<T>, x_shape: &[usize]) -> Tensor<T> {
    assert_eq!(idx.len(), gout.numel(), "maxpool2d_backward: index/gradient length mismatch");
    let mut dx = Tensor::zeros(x_shape.to_vec());
    let d = dx.data_mut();
    for (&i, &g) in idx.iter().zip(gout.data()) {
        d[i as usize] = d[i as usize] + g;
    }
    dx
}

/// Global average pooling (N,C,H,W) → (N,C).
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w) =
        x.try_dims4().map_err(|detail| NnError::ShapeMismatch { op: "global_avg_pool", detail })?;
    let area = T::from_f64((h * w) as f64);
    let mut y = Tensor::zeros(vec![n, c]);
    let yd = y.data_mut();
    for img in 0..n {
        for ch in 0..c {
            let plane = &x.data()[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            let mut acc = T::zero();
            for &v in plane {
                acc = acc + v;
            }
            yd[img * c + ch] = acc / area;
        }
    }
    Ok(y)
}

/// Gradient of global average pooling: spread evenly over the plane.
pub fn global_avg_pool_backward<T: Scalar>(gout: &Tensor<T>, x_shape: &[usize]) -> Tensor<T> {
    assert_eq!(x_shape.len(), 4, "global_avg_pool_backward: expected rank-4 input shape");
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    assert_eq!(gout.shape(), &[n, c], "global_avg_pool_backward: gradient shape mismatch");
    let inv_area = T::one() / T::from_f64((h * w) as f64);
    let mut dx = Tensor::zeros(x_shape.to_vec());
    let d = dx.data_mut();
    for img in 0..n {
        for ch in 0..c {
            let g = gout.data()[img * c + ch] * inv_area;
            d[(img * c + ch) * h * w..(img * c + ch + 1) * h * w].fill(g);
        }
    }
    dx
}

/// Fully-connected layer: y(n,k) = x(n,f)·Wᵀ + b, with W stored (k,f).
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, f) = x.try_dims2().map_err(|detail| NnError::ShapeMismatch { op: "linear_forward", detail })?;
    let (k, wf) = w.try_dims2().map_err(|detail| NnError::ShapeMismatch { op: "linear_forward", detail })?;
    if wf != f || b.numel() != k {
        return Err(NnError::ShapeMismatch {
            op: "linear_forward",
            detail: format!("x has {f} features, W is {k}x{wf}, b has {}", b.numel()),
        });
    }
    let mut w_t = vec![T::zero(); f * k];
    transpose(k, f, w.data(), &mut w_t);
    let mut y = Tensor::zeros(vec![n, k]);
    gemm_nn(n, f, k, x.data(), &w_t, y.data_mut(), false);
    let yd = y.data_mut();
    for row in 0..n {
        for col in 0..k {
            yd[row * k + col] = yd[row * k + col] + b.data()[col];
        }
    }
    Ok(y)
}

/// Backward for the fully-connected layer; returns (dx, dw, db).
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (n, f) = x.try_dims2().map_err(|detail| NnError::ShapeMismatch { op: "linear_backward", detail })?;
    let (k, _) = w.try_dims2().map_err(|detail| NnError::ShapeMismatch { op: "linear_backward", detail })?;
    if gout.shape() != [n, k] {
        return Err(NnError::ShapeMismatch {
            op: "linear_backward",
            detail: format!("gout shape {:?} does not match [{n}, {k}]", gout.shape()),
        });
    }
    // dx(n,f) = gout(n,k)·W(k,f)
    let mut dx = Tensor::zeros(vec![n, f]);
    gemm_nn(n, k, f, gout.data(), w.data(), dx.data_mut(), false);
    // dW(k,f) = goutᵀ(k,n)·x(n,f)
    let mut g_t = vec![T::zero(); k * n];
    transpose(n, k, gout.data(), &mut g_t);
    let mut dw = Tensor::zeros(vec![k, f]);
    gemm_nn(k, n, f, &g_t, x.data(), dw.data_mut(), false);
    // db(k) = column sums of gout, rows in ascending order.
    let mut db = Tensor::zeros(vec![k]);
    let dbd = db.data_mut();
    for row in 0..n {
        for col in 0..k {
            dbd[col] = dbd[col] + gout.data()[row * k + col];
        }
    }
    Ok((dx, dw, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_and_masks() {
        let mut x = Tensor::new(vec![5], vec![-1.0f32, 0.0, 2.0, -0.5, 3.0]);
        relu_inplace(&mut x);
        assert_eq!(x.data(), &[0.0, 0.0, 2.0, 0.0, 3.0]);
        let mut g = Tensor::new(vec![5], vec![1.0f32; 5]);
        relu_backward_inplace(&x, &mut g);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_2x2_known_values() {
        let x = Tensor::new(
            vec![1, 1, 4, 4],
            vec![
                1.0f32, 2.0, 5.0, 6.0,
                3.0, 4.0, 7.0, 8.0,
                9.0, 10.0, 13.0, 14.0,
                11.0, 12.0, 15.0, 16.0,
            ],
        );
        let (y, idx) = maxpool2d_forward(&x, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 8.0, 12.0, 16.0]);
        let g = Tensor::new(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]);
        let dx = maxpool2d_backward(&idx, &g, &[1, 1, 4, 4]);
        assert_eq!(dx.data()[5], 1.0); // position of 4.0
        assert_eq!(dx.data()[7], 2.0); // position of 8.0
        assert_eq!(dx.data()[13], 3.0);
        assert_eq!(dx.data()[15], 4.0);
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), 4);
    }

    #[test]
    fn maxpool_tie_picks_first() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![7.0f32, 7.0, 7.0, 7.0]);
        let (_, idx) = maxpool2d_forward(&x, 2, 2, 0).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn global_avg_pool_means() {
        let x = Tensor::new(vec![1, 2, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
        let y = global_avg_pool_forward(&x).unwrap();
        assert_eq!(y.data(), &[2.5, 25.0]);
        let g = Tensor::new(vec![1, 2], vec![4.0f32, 8.0]);
        let dx = global_avg_pool_backward(&g, &[1, 2, 2, 2]);
        assert_eq!(dx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn linear_matches_hand_computation() {
        // x = [[1,2,3]], W = [[1,0,0],[0,1,0]], b = [10, 20]
        let x = Tensor::new(vec![1, 3], vec![1.0f32, 2.0, 3.0]);
        let w = Tensor::new(vec![2, 3], vec![1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = Tensor::new(vec![2], vec![10.0f32, 20.0]);
        let y = linear_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0]);
        let g = Tensor::new(vec![1, 2], vec![1.0f32, 1.0]);
        let (dx, dw, db) = linear_backward(&x, &w, &g).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 0.0]);
        assert_eq!(dw.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(db.data(), &[1.0, 1.0]);
    }
}
