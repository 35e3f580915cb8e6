//! Batch normalization over (N,C,H,W), per-channel statistics.
//!
//! Training mode normalizes with biased batch variance and maintains
//! running statistics with momentum 0.1 (the running variance stores the
//! unbiased estimate). Eval mode applies the running statistics as a pure
//! per-element affine map, so results are independent of batch composition.

use super::tensor::Tensor;
use super::{NnError, Scalar};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// True once at least one training batch has updated the running stats.
    pub initialized: bool,
}

/// Per-batch values the backward pass needs.
pub struct BnCache<T> {
    pub mean: Vec<T>,
    pub invstd: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    fn check_input(&self, op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize), NnError> {
        let (n, c, h, w) = x.try_dims4().map_err(|detail| NnError::ShapeMismatch { op, detail })?;
        if c != self.channels() {
            return Err(NnError::ShapeMismatch {
                op,
                detail: format!("input has {c} channels, layer has {}", self.channels()),
            });
        }
        Ok((n, c, h, w))
    }

    /// Training forward: normalize by batch statistics, update running stats.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        let (n, c, h, w) = self.check_input("batchnorm_train", x)?;
        let count = n * h * w;
        if count < 2 {
            return Err(NnError::DegenerateStats {
                detail: format!("need at least 2 values per channel, got {count}"),
            });
        }
        let plane = h * w;
        let count_t = T::from_f64(count as f64);
        let eps = T::from_f64(BN_EPS);
        let mom = T::from_f64(BN_MOMENTUM);
        let mut cache = BnCache { mean: vec![T::zero(); c], invstd: vec![T::zero(); c] };
        let mut y = Tensor::zeros(x.shape().to_vec());
        for ch in 0..c {
            let mut sum = T::zero();
            for img in 0..n {
                let s = &x.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                for &v in s {
                    sum = sum + v;
                }
            }
            let mean = sum / count_t;
            let mut sq = T::zero();
            for img in 0..n {
                let s = &x.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                for &v in s {
                    let d = v - mean;
                    sq = d.mul_add(d, sq);
                }
            }
            let var_biased = sq / count_t;
            if !var_biased.is_finite() {
                return Err(NnError::DegenerateStats {
                    detail: format!("non-finite variance in channel {ch}"),
                });
            }
            let invstd = T::one() / (var_biased + eps).sqrt();
            cache.mean[ch] = mean;
            cache.invstd[ch] = invstd;

            let g = self.gamma.data()[ch];
            let b = self.beta.data()[ch];
            let scale = g * invstd;
            for img in 0..n {
                let s = &x.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                let d = &mut y.data_mut()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                for (dv, &sv) in d.iter_mut().zip(s) {
                    *dv = (sv - mean).mul_add(scale, b);
                }
            }

            let var_unbiased = sq / T::from_f64((count - 1) as f64);
            let rm = self.running_mean.data_mut();
            rm[ch] = (T::one() - mom) * rm[ch] + mom * mean;
            let rv = self.running_var.data_mut();
            rv[ch] = (T::one() - mom) * rv[ch] + mom * var_unbiased;
        }
        self.initialized = true;
        Ok((y, cache))
    }

    /// Eval forward: affine map with the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if !self.initialized {
            return Err(NnError::EvalBeforeStats);
        }
        let (n, c, _, _) = self.check_input("batchnorm_eval", x)?;
        let plane = x.shape()[2] * x.shape()[3];
        let eps = T::from_f64(BN_EPS);
        let mut y = Tensor::zeros(x.shape().to_vec());
        for ch in 0..c {
            let mean = self.running_mean.data()[ch];
            let invstd = T::one() / (self.running_var.data()[ch] + eps).sqrt();
            let scale = self.gamma.data()[ch] * invstd;
            let b = self.beta.data()[ch];
            for img in 0..n {
                let s = &x.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                let d = &mut y.data_mut()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                for (dv, &sv) in d.iter_mut().zip(s) {
                    *dv = (sv - mean).mul_add(scale, b);
                }
            }
        }
        Ok(y)
    }

    /// Backward for training mode; returns (dx, dgamma, dbeta).
    pub fn backward(
        &self,
        x: &Tensor<T>,
        cache: &BnCache<T>,
        gout: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
        let (n, c, h, w) = self.check_input("batchnorm_backward", x)?;
        if gout.shape() != x.shape() {
            return Err(NnError::ShapeMismatch {
                op: "batchnorm_backward",
                detail: format!("gout shape {:?} does not match input {:?}", gout.shape(), x.shape()),
            });
        }
        let plane = h * w;
        let count = n * plane;
        let count_t = T::from_f64(count as f64);
        let mut dx = Tensor::zeros(x.shape().to_vec());
        let mut dgamma = Tensor::zeros(vec![c]);
        let mut dbeta = Tensor::zeros(vec![c]);
        for ch in 0..c {
            let mean = cache.mean[ch];
            let invstd = cache.invstd[ch];
            let g = self.gamma.data()[ch];
            // sum_g = Σ gout, sum_gx = Σ gout·xhat
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for img in 0..n {
                let xs = &x.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                let gs = &gout.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                for (&xv, &gv) in xs.iter().zip(gs) {
                    let xhat = (xv - mean) * invstd;
                    sum_g = sum_g + gv;
                    sum_gx = gv.mul_add(xhat, sum_gx);
                }
            }
            dgamma.data_mut()[ch] = sum_gx;
            dbeta.data_mut()[ch] = sum_g;
            // dx = γ·invstd/m · (m·g − Σg − xhat·Σ(g·xhat))
            let k = g * invstd / count_t;
            for img in 0..n {
                let xs = &x.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                let gs = &gout.data()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                let ds = &mut dx.data_mut()[(img * c + ch) * plane..(img * c + ch + 1) * plane];
                for ((dv, &xv), &gv) in ds.iter_mut().zip(xs).zip(gs) {
                    let xhat = (xv - mean) * invstd;
                    *dv = k * (count_t * gv - sum_g - xhat * sum_gx);
                }
            }
        }
        Ok((dx, dgamma, dbeta))
    }
}
