//! Check mode: independent oracles for the numerical core.
//!
//! Two facilities live here. `conv2d_reference` is a naive direct-loop
//! convolution whose per-output accumulation order (channel, kernel row,
//! kernel column, with explicit zero taps in the padding) matches the
//! optimized path exactly, so the two must agree to the bit.
//! `gradcheck_all` compares every layer's analytic backward against 64-bit
//! central finite differences (h = 1e-5).

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::conv::{check_conv_shapes, conv2d_backward, conv2d_forward, ConvScratch};
use super::layers::{
    global_avg_pool_backward, global_avg_pool_forward, linear_backward, linear_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward_inplace, relu_inplace,
};
use super::loss::cross_entropy_smoothed;
use super::model::{BnLayer, Conv2d, Param};
use super::norm::BatchNorm2d;
use super::tensor::Tensor;
use super::{NnError, Scalar};

pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-6;

/// Denominator floor for [`rel_err`]: below this magnitude the comparison
/// degrades gracefully into an absolute check safely above the f64
/// central-difference noise floor.
const GRADCHECK_SCALE_FLOOR: f64 = 1e-3;

/// Naive direct-loop convolution. For every output element the taps are
/// visited in (input channel, kernel row, kernel column) order and folded
/// with `mul_add`, including zero taps where the window leaves the input,
/// mirroring the im2col + GEMM accumulation order of the optimized path.
pub fn conv2d_reference<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, NnError> {
    let (n, co, g) = check_conv_shapes("conv2d_reference", x, w, stride, pad)?;
    let mut y = Tensor::zeros(vec![n, co, g.oh, g.ow]);
    let yd = y.data_mut();
    let (ci, h, wd, kh, kw) = (g.ci, g.h, g.w, g.kh, g.kw);
    for img in 0..n {
        for c in 0..co {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = T::zero();
                    for b in 0..ci {
                        for r in 0..kh {
                            for q in 0..kw {
                                let iy = (oy * stride + r) as isize - pad as isize;
                                let ix = (ox * stride + q) as isize - pad as isize;
                                let xv = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wd {
                                    x.data()[((img * ci + b) * h + iy as usize) * wd + ix as usize]
                                } else {
                                    T::zero()
                                };
                                let wv = w.data()[((c * ci + b) * kh + r) * kw + q];
                                acc = wv.mul_add(xv, acc);
                            }
                        }
                    }
                    yd[((img * co + c) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    Ok(y)
}

/// Run `shapes` random shape configurations (plus a few fixed large ones that
/// exercise the wide-kernel and image-blocking paths) through both the
/// optimized and reference convolutions, in f32 and f64, requiring exact
/// equality. Returns the number of configurations checked.
pub fn conv_oracle_suite(shapes: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut configs = Vec::new();
    while configs.len() < shapes.saturating_sub(2) {
        let (n, ci, co) = (rng.random_range(1..4usize), rng.random_range(1..5usize), rng.random_range(1..7usize));
        let (h, w) = (rng.random_range(1..13usize), rng.random_range(1..13usize));
        let (kh, kw) = (rng.random_range(1..6usize), rng.random_range(1..6usize));
        let stride = rng.random_range(1..4usize);
        let pad = rng.random_range(0..3usize);
        if h + 2 * pad >= kh && w + 2 * pad >= kw {
            configs.push((n, ci, co, h, w, kh, kw, stride, pad));
        }
    }
    if shapes >= 2 {
        // Wide-tile kernel path (large k and many columns) and the
        // multi-image blocking path.
        configs.push((4, 16, 64, 16, 16, 3, 3, 1, 1));
        configs.push((20, 64, 8, 32, 32, 3, 3, 1, 1));
    }
    let mut scratch64 = ConvScratch::<f64>::new();
    let mut scratch32 = ConvScratch::<f32>::new();
    for (i, &(n, ci, co, h, w, kh, kw, stride, pad)) in configs.iter().enumerate() {
        let x64: Vec<f64> = (0..n * ci * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w64: Vec<f64> = (0..co * ci * kh * kw).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xt = Tensor::new(vec![n, ci, h, w], x64.clone());
        let wt = Tensor::new(vec![co, ci, kh, kw], w64.clone());
        let fast = conv2d_forward(&xt, &wt, stride, pad, &mut scratch64).map_err(|e| e.to_string())?;
        let slow = conv2d_reference(&xt, &wt, stride, pad).map_err(|e| e.to_string())?;
        if fast.data() != slow.data() {
            return Err(format!("f64 mismatch on config {i}: {:?}", (n, ci, co, h, w, kh, kw, stride, pad)));
        }
        let xt32 = Tensor::new(vec![n, ci, h, w], x64.iter().map(|&v| v as f32).collect());
        let wt32 = Tensor::new(vec![co, ci, kh, kw], w64.iter().map(|&v| v as f32).collect());
        let fast32 = conv2d_forward(&xt32, &wt32, stride, pad, &mut scratch32).map_err(|e| e.to_string())?;
        let slow32 = conv2d_reference(&xt32, &wt32, stride, pad).map_err(|e| e.to_string())?;
        if fast32.data() != slow32.data() {
            return Err(format!("f32 mismatch on config {i}: {:?}", (n, ci, co, h, w, kh, kw, stride, pad)));
        }
    }
    Ok(configs.len())
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: String,
    pub instances: usize,
    pub max_rel: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel < GRADCHECK_TOL
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    // Hybrid relative/absolute comparison. phi is O(10) in f64, so a central
    // difference at h = 1e-5 carries ~1e-10 of cancellation noise in the
    // derivative estimate; for gradients near that floor a pure relative
    // error only measures noise. Flooring the denominator turns the check
    // into an absolute one (atol = GRADCHECK_SCALE_FLOOR * tol ~ 1e-9) for
    // tiny gradients while leaving larger ones strictly relative.
    let scale = analytic.abs().max(numeric.abs()).max(GRADCHECK_SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

fn dot(c: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in c.iter().zip(y) {
        acc = a.mul_add(*b, acc);
    }
    acc
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Uniform in ±1 with every value at least `margin` from zero, so ReLU masks
/// cannot flip under the finite-difference perturbation.
fn uniform_away_from_zero(rng: &mut ChaCha8Rng, len: usize, margin: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < margin {
                v + margin * 2.0 * if v >= 0.0 { 1.0 } else { -1.0 }
            } else {
                v
            }
        })
        .collect()
}

/// Globally distinct values (min gap ≥ 0.008), so max-pool argmaxes cannot
/// change under perturbation.
fn distinct_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    perm.into_iter().map(|p| p as f64 * 0.01 + rng.random_range(-0.001..0.001)).collect()
}

/// Central finite difference of `phi` with respect to one slot of `data`.
fn central_diff(data: &mut [f64], idx: usize, phi: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = data[idx];
    data[idx] = orig + GRADCHECK_H;
    let plus = phi(data);
    data[idx] = orig - GRADCHECK_H;
    let minus = phi(data);
    data[idx] = orig;
    (plus - minus) / (2.0 * GRADCHECK_H)
}

fn check_conv(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    let mut scratch = ConvScratch::<f64>::new();
    for _ in 0..instances {
        let (n, ci, co) = (rng.random_range(1..3usize), rng.random_range(1..4usize), rng.random_range(1..4usize));
        let (h, w) = (rng.random_range(4..8usize), rng.random_range(4..8usize));
        let k = if rng.random_bool(0.5) { 1 } else { 3 };
        let stride = rng.random_range(1..3usize);
        let pad = rng.random_range(0..2usize);
        let mut xv = uniform(rng, n * ci * h * w, -1.0, 1.0);
        let mut wv = uniform(rng, co * ci * k * k, -1.0, 1.0);
        let probe = conv2d_forward(
            &Tensor::new(vec![n, ci, h, w], xv.clone()),
            &Tensor::new(vec![co, ci, k, k], wv.clone()),
            stride,
            pad,
            &mut scratch,
        )
        .unwrap();
        let c = uniform(rng, probe.numel(), -1.0, 1.0);

        let xt = Tensor::new(vec![n, ci, h, w], xv.clone());
        let wt = Tensor::new(vec![co, ci, k, k], wv.clone());
        let gout = Tensor::new(probe.shape().to_vec(), c.clone());
        let mut dw = Tensor::zeros(vec![co, ci, k, k]);
        let mut dx = Tensor::zeros(vec![n, ci, h, w]);
        conv2d_backward(&xt, &wt, &gout, stride, pad, &mut dw, Some(&mut dx), &mut scratch).unwrap();

        let mut phi_x = |xs: &[f64]| {
            let y = conv2d_forward(&Tensor::new(vec![n, ci, h, w], xs.to_vec()), &wt, stride, pad, &mut scratch)
                .unwrap();
            dot(&c, y.data())
        };
        for i in 0..xv.len() {
            max_rel = max_rel.max(rel_err(dx.data()[i], central_diff(&mut xv, i, &mut phi_x)));
        }
        let mut scratch2 = ConvScratch::<f64>::new();
        let mut phi_w = |ws: &[f64]| {
            let y = conv2d_forward(&xt, &Tensor::new(vec![co, ci, k, k], ws.to_vec()), stride, pad, &mut scratch2)
                .unwrap();
            dot(&c, y.data())
        };
        for i in 0..wv.len() {
            max_rel = max_rel.max(rel_err(dw.data()[i], central_diff(&mut wv, i, &mut phi_w)));
        }
    }
    GradCheckReport { layer: "conv2d".into(), instances, max_rel }
}

fn check_batchnorm(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let (n, c, h, w) = (
            rng.random_range(2..4usize),
            rng.random_range(1..4usize),
            rng.random_range(2..5usize),
            rng.random_range(2..5usize),
        );
        let mut xv = uniform(rng, n * c * h * w, -1.0, 1.0);
        let mut gv = uniform(rng, c, 0.5, 1.5);
        let mut bv = uniform(rng, c, -0.5, 0.5);
        let cv = uniform(rng, n * c * h * w, -1.0, 1.0);

        let mut bn = BatchNorm2d::<f64>::new(c);
        bn.gamma = Tensor::new(vec![c], gv.clone());
        bn.beta = Tensor::new(vec![c], bv.clone());
        let xt = Tensor::new(vec![n, c, h, w], xv.clone());
        let (_, cache) = bn.forward_train(&xt).unwrap();
        let gout = Tensor::new(vec![n, c, h, w], cv.clone());
        let (dx, dgamma, dbeta) = bn.backward(&xt, &cache, &gout).unwrap();

        let shape = [n, c, h, w];
        let phi = |xs: &[f64], gs: &[f64], bs: &[f64]| {
            let mut bn = BatchNorm2d::<f64>::new(c);
            bn.gamma = Tensor::new(vec![c], gs.to_vec());
            bn.beta = Tensor::new(vec![c], bs.to_vec());
            let (y, _) = bn.forward_train(&Tensor::new(shape.to_vec(), xs.to_vec())).unwrap();
            dot(&cv, y.data())
        };
        for i in 0..xv.len() {
            let g = gv.clone();
            let b = bv.clone();
            let num = central_diff(&mut xv, i, &mut |xs| phi(xs, &g, &b));
            max_rel = max_rel.max(rel_err(dx.data()[i], num));
        }
        for i in 0..c {
            let x = xv.clone();
            let b = bv.clone();
            let num = central_diff(&mut gv, i, &mut |gs| phi(&x, gs, &b));
            max_rel = max_rel.max(rel_err(dgamma.data()[i], num));
            let x = xv.clone();
            let g = gv.clone();
            let num = central_diff(&mut bv, i, &mut |bs| phi(&x, &g, bs));
            max_rel = max_rel.max(rel_err(dbeta.data()[i], num));
        }
    }
    GradCheckReport { layer: "batchnorm".into(), instances, max_rel }
}

fn check_relu(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let len = rng.random_range(20..120usize);
        let mut xv = uniform_away_from_zero(rng, len, 1e-3);
        let cv = uniform(rng, len, -1.0, 1.0);
        let shape = vec![1, 1, 1, len];
        let mut y = Tensor::new(shape.clone(), xv.clone());
        relu_inplace(&mut y);
        let mut g = Tensor::new(shape.clone(), cv.clone());
        relu_backward_inplace(&y, &mut g);
        let mut phi = |xs: &[f64]| {
            let mut t = Tensor::new(shape.clone(), xs.to_vec());
            relu_inplace(&mut t);
            dot(&cv, t.data())
        };
        for i in 0..len {
            max_rel = max_rel.max(rel_err(g.data()[i], central_diff(&mut xv, i, &mut phi)));
        }
    }
    GradCheckReport { layer: "relu".into(), instances, max_rel }
}

fn check_maxpool(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let (n, c, h, w) = (
            rng.random_range(1..3usize),
            rng.random_range(1..3usize),
            rng.random_range(4..8usize),
            rng.random_range(4..8usize),
        );
        let kernel = rng.random_range(2..4usize);
        let stride = rng.random_range(1..3usize);
        let mut xv = distinct_values(rng, n * c * h * w);
        let shape = vec![n, c, h, w];
        let (y, idx) = maxpool2d_forward(&Tensor::new(shape.clone(), xv.clone()), kernel, stride, 1).unwrap();
        let cv = uniform(rng, y.numel(), -1.0, 1.0);
        let dx = maxpool2d_backward(&idx, &Tensor::new(y.shape().to_vec(), cv.clone()), &shape);
        let mut phi = |xs: &[f64]| {
            let (t, _) = maxpool2d_forward(&Tensor::new(shape.clone(), xs.to_vec()), kernel, stride, 1).unwrap();
            dot(&cv, t.data())
        };
        for i in 0..xv.len() {
            max_rel = max_rel.max(rel_err(dx.data()[i], central_diff(&mut xv, i, &mut phi)));
        }
    }
    GradCheckReport { layer: "maxpool".into(), instances, max_rel }
}

fn check_gap(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let (n, c, h, w) = (
            rng.random_range(1..4usize),
            rng.random_range(1..5usize),
            rng.random_range(2..6usize),
            rng.random_range(2..6usize),
        );
        let mut xv = uniform(rng, n * c * h * w, -1.0, 1.0);
        let cv = uniform(rng, n * c, -1.0, 1.0);
        let shape = vec![n, c, h, w];
        let dx = global_avg_pool_backward(&Tensor::new(vec![n, c], cv.clone()), &shape);
        let mut phi = |xs: &[f64]| {
            let y = global_avg_pool_forward(&Tensor::new(shape.clone(), xs.to_vec())).unwrap();
            dot(&cv, y.data())
        };
        for i in 0..xv.len() {
            max_rel = max_rel.max(rel_err(dx.data()[i], central_diff(&mut xv, i, &mut phi)));
        }
    }
    GradCheckReport { layer: "global_avg_pool".into(), instances, max_rel }
}

fn check_linear(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for _ in 0..instances {
        let (n, f, k) = (rng.random_range(2..5usize), rng.random_range(3..7usize), rng.random_range(2..5usize));
        let mut xv = uniform(rng, n * f, -1.0, 1.0);
        let mut wv = uniform(rng, k * f, -1.0, 1.0);
        let mut bv = uniform(rng, k, -1.0, 1.0);
        let cv = uniform(rng, n * k, -1.0, 1.0);
        let xt = Tensor::new(vec![n, f], xv.clone());
        let wt = Tensor::new(vec![k, f], wv.clone());
        let gout = Tensor::new(vec![n, k], cv.clone());
        let (dx, dw, db) = linear_backward(&xt, &wt, &gout).unwrap();
        let phi = |xs: &[f64], ws: &[f64], bs: &[f64]| {
            let y = linear_forward(
                &Tensor::new(vec![n, f], xs.to_vec()),
                &Tensor::new(vec![k, f], ws.to_vec()),
                &Tensor::new(vec![k], bs.to_vec()),
            )
            .unwrap();
            dot(&cv, y.data())
        };
        for i in 0..xv.len() {
            let (w2, b2) = (wv.clone(), bv.clone());
            max_rel = max_rel.max(rel_err(dx.data()[i], central_diff(&mut xv, i, &mut |xs| phi(xs, &w2, &b2))));
        }
        for i in 0..wv.len() {
            let (x2, b2) = (xv.clone(), bv.clone());
            max_rel = max_rel.max(rel_err(dw.data()[i], central_diff(&mut wv, i, &mut |ws| phi(&x2, ws, &b2))));
        }
        for i in 0..bv.len() {
            let (x2, w2) = (xv.clone(), wv.clone());
            max_rel = max_rel.max(rel_err(db.data()[i], central_diff(&mut bv, i, &mut |bs| phi(&x2, &w2, bs))));
        }
    }
    GradCheckReport { layer: "linear".into(), instances, max_rel }
}

fn check_loss(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for inst in 0..instances {
        let (n, k) = (rng.random_range(2..7usize), 5usize);
        let alpha = [0.0, 0.1, 0.37][inst % 3];
        let mut lv = uniform(rng, n * k, -2.0, 2.0);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
        let (_, grad) = cross_entropy_smoothed(&Tensor::new(vec![n, k], lv.clone()), &labels, alpha).unwrap();
        let mut phi = |ls: &[f64]| {
            cross_entropy_smoothed(&Tensor::new(vec![n, k], ls.to_vec()), &labels, alpha).unwrap().0
        };
        for i in 0..lv.len() {
            max_rel = max_rel.max(rel_err(grad.data()[i], central_diff(&mut lv, i, &mut phi)));
        }
    }
    GradCheckReport { layer: "cross_entropy".into(), instances, max_rel }
}

/// Build a random residual block (identity skip or projection skip).
fn random_block(rng: &mut ChaCha8Rng, ci: usize, width: usize, stride: usize) -> super::model::Block<f64> {
    let conv = |rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize, stride: usize, pad: usize| Conv2d {
        w: Param::new(Tensor::new(vec![co, ci, k, k], uniform(rng, co * ci * k * k, -0.5, 0.5))),
        stride,
        pad,
    };
    let needs_proj = stride != 1 || ci != width;
    super::model::Block {
        conv1: conv(rng, width, ci, 3, stride, 1),
        bn1: BnLayer::new(width),
        conv2: conv(rng, width, width, 3, 1, 1),
        bn2: BnLayer::new(width),
        proj: needs_proj.then(|| (conv(rng, width, ci, 1, stride, 0), BnLayer::new(width))),
    }
}

/// Smallest |pre-ReLU| value inside the block for input `xs` — both ReLUs.
/// Instances are resampled until this clears a margin, so the finite
/// differences never straddle a ReLU kink.
fn block_relu_margin(blk: &super::model::Block<f64>, shape: &[usize], xs: &[f64]) -> f64 {
    let mut scratch = ConvScratch::<f64>::new();
    let x = Tensor::new(shape.to_vec(), xs.to_vec());
    let c1 = conv2d_forward(&x, &blk.conv1.w.value, blk.conv1.stride, blk.conv1.pad, &mut scratch).unwrap();
    let (b1, _) = blk.bn1.bn.clone().forward_train(&c1).unwrap();
    let mut margin = b1.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let mut r1 = b1;
    relu_inplace(&mut r1);
    let c2 = conv2d_forward(&r1, &blk.conv2.w.value, blk.conv2.stride, blk.conv2.pad, &mut scratch).unwrap();
    let (mut pre, _) = blk.bn2.bn.clone().forward_train(&c2).unwrap();
    match &blk.proj {
        Some((pc, pb)) => {
            let xp = conv2d_forward(&x, &pc.w.value, pc.stride, pc.pad, &mut scratch).unwrap();
            let (skip, _) = pb.bn.clone().forward_train(&xp).unwrap();
            super::gemm::add_assign(pre.data_mut(), skip.data());
        }
        None => super::gemm::add_assign(pre.data_mut(), x.data()),
    }
    for v in pre.data() {
        margin = margin.min(v.abs());
    }
    margin
}

fn block_phi(blk: &super::model::Block<f64>, shape: &[usize], xs: &[f64], c: &[f64]) -> f64 {
    let mut blk = blk.clone();
    let mut scratch = ConvScratch::<f64>::new();
    let (y, _) = blk.forward_train(Tensor::new(shape.to_vec(), xs.to_vec()), &mut scratch).unwrap();
    dot(c, y.data())
}

fn check_block(rng: &mut ChaCha8Rng, instances: usize) -> GradCheckReport {
    let mut max_rel = 0.0f64;
    for inst in 0..instances {
        let ci = rng.random_range(2..4usize);
        let width = rng.random_range(2..5usize);
        let stride = if inst % 2 == 0 { 1 } else { 2 };
        let shape = vec![2, ci, 6, 6];

        // Resample until both ReLU inputs clear the kink margin.
        let (blk, xv) = loop {
            let blk = random_block(rng, ci, width, stride);
            let xv = uniform(rng, 2 * ci * 36, -1.0, 1.0);
            if block_relu_margin(&blk, &shape, &xv) > 1e-3 {
                break (blk, xv);
            }
        };
        let mut xv = xv;

        let mut work = blk.clone();
        let mut scratch = ConvScratch::<f64>::new();
        let (y, cache) = work.forward_train(Tensor::new(shape.clone(), xv.clone()), &mut scratch).unwrap();
        let c = uniform(rng, y.numel(), -1.0, 1.0);
        let dx = work
            .backward(&cache, &y, Tensor::new(y.shape().to_vec(), c.clone()), &mut scratch)
            .unwrap();

        for i in 0..xv.len() {
            let num = central_diff(&mut xv, i, &mut |xs| block_phi(&blk, &shape, xs, &c));
            max_rel = max_rel.max(rel_err(dx.data()[i], num));
        }

        // All parameter gradients: perturb a copy of the block.
        let analytic: Vec<(String, Vec<f64>)> = collect_block_grads(&work);
        for (pi, (name, grads)) in analytic.iter().enumerate() {
            for gi in 0..grads.len() {
                let mut perturbed = blk.clone();
                let phi_at = |delta: f64, perturbed: &mut super::model::Block<f64>| {
                    set_block_param(perturbed, pi, gi, delta);
                    let v = block_phi(perturbed, &shape, &xv, &c);
                    set_block_param(perturbed, pi, gi, -delta);
                    v
                };
                let plus = phi_at(GRADCHECK_H, &mut perturbed);
                let minus = phi_at(-GRADCHECK_H, &mut perturbed);
                let num = (plus - minus) / (2.0 * GRADCHECK_H);
                let rel = rel_err(grads[gi], num);
                if rel > max_rel {
                    max_rel = rel;
                }
                debug_assert!(rel < 1.0, "block param {name}[{gi}]");
            }
        }
    }
    GradCheckReport { layer: "residual_block".into(), instances, max_rel }
}

/// (name, analytic gradient) for every parameter tensor of a block, in a
/// fixed order matching `set_block_param`.
fn collect_block_grads(blk: &super::model::Block<f64>) -> Vec<(String, Vec<f64>)> {
    let mut out = vec![
        ("conv1.w".to_string(), blk.conv1.w.grad.data().to_vec()),
        ("bn1.gamma".to_string(), blk.bn1.dgamma.data().to_vec()),
        ("bn1.beta".to_string(), blk.bn1.dbeta.data().to_vec()),
        ("conv2.w".to_string(), blk.conv2.w.grad.data().to_vec()),
        ("bn2.gamma".to_string(), blk.bn2.dgamma.data().to_vec()),
        ("bn2.beta".to_string(), blk.bn2.dbeta.data().to_vec()),
    ];
    if let Some((pc, pb)) = &blk.proj {
        out.push(("proj.w".to_string(), pc.w.grad.data().to_vec()));
        out.push(("proj_bn.gamma".to_string(), pb.dgamma.data().to_vec()));
        out.push(("proj_bn.beta".to_string(), pb.dbeta.data().to_vec()));
    }
    out
}

fn set_block_param(blk: &mut super::model::Block<f64>, param: usize, idx: usize, delta: f64) {
    let slot: &mut f64 = match param {
        0 => &mut blk.conv1.w.value.data_mut()[idx],
        1 => &mut blk.bn1.bn.gamma.data_mut()[idx],
        2 => &mut blk.bn1.bn.beta.data_mut()[idx],
        3 => &mut blk.conv2.w.value.data_mut()[idx],
        4 => &mut blk.bn2.bn.gamma.data_mut()[idx],
        5 => &mut blk.bn2.bn.beta.data_mut()[idx],
        6 => &mut blk.proj.as_mut().unwrap().0.w.value.data_mut()[idx],
        7 => &mut blk.proj.as_mut().unwrap().1.bn.gamma.data_mut()[idx],
        8 => &mut blk.proj.as_mut().unwrap().1.bn.beta.data_mut()[idx],
        _ => unreachable!(),
    };
    *slot += delta;
}

/// Gradient-check every layer kind with `instances` random instances each.
pub fn gradcheck_all(instances: usize, seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check_conv(&mut rng, instances),
        check_batchnorm(&mut rng, instances),
        check_relu(&mut rng, instances),
        check_maxpool(&mut rng, instances),
        check_gap(&mut rng, instances),
        check_linear(&mut rng, instances),
        check_block(&mut rng, instances),
        check_loss(&mut rng, instances),
    ]
}
