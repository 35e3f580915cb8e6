//! 2-D convolution via im2col + matrix multiply, with exact-order
//! accumulation: each output element sums its taps in (channel, row, col)
//! order, so the optimized path is bit-identical to a naive nested loop.
//!
//! Images are processed in blocks: the column matrices of several images are
//! laid side by side and multiplied in one call, which keeps the matrix
//! kernels wide even for the late stages where one image contributes only a
//! handful of output positions. Blocking changes nothing about per-element
//! arithmetic order.

use super::gemm::{add_assign, gemm_nn, transpose};
use super::tensor::Tensor;
use super::{NnError, Scalar};

/// Output spatial extent for one axis.
pub fn conv_out_dim(dim: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(stride > 0, "stride must be positive");
    assert!(dim + 2 * pad >= kernel, "kernel larger than padded input");
    (dim + 2 * pad - kernel) / stride + 1
}

/// Cap on elements in a blocked column matrix (~40 MB of f32).
const COL_CAP: usize = 10_000_000;

fn images_per_block(k_dim: usize, m: usize, n: usize) -> usize {
    (COL_CAP / (k_dim * m).max(1)).clamp(1, n.max(1))
}

/// Reusable scratch buffers for conv forward/backward so per-batch calls do
/// not allocate.
#[derive(Default)]
pub struct ConvScratch<T> {
    col: Vec<T>,
    dcol: Vec<T>,
    w_t: Vec<T>,
    gout_t: Vec<T>,
    dwt: Vec<T>,
    ybuf: Vec<T>,
    padded: Vec<T>,
}

impl<T: Scalar> ConvScratch<T> {
    pub fn new() -> Self {
        Self::default()
    }
}

fn ensure<T: Scalar>(buf: &mut Vec<T>, len: usize) {
    if buf.len() < len {
        buf.resize(len, T::zero());
    }
}

pub(crate) struct Geom {
    pub(crate) ci: usize,
    pub(crate) h: usize,
    pub(crate) w: usize,
    pub(crate) kh: usize,
    pub(crate) kw: usize,
    pub(crate) stride: usize,
    pub(crate) pad: usize,
    pub(crate) oh: usize,
    pub(crate) ow: usize,
}

impl Geom {
    fn k_dim(&self) -> usize {
        self.ci * self.kh * self.kw
    }
    fn m(&self) -> usize {
        self.oh * self.ow
    }
    fn padded_len(&self) -> usize {
        (self.h + 2 * self.pad) * (self.w + 2 * self.pad)
    }
}

/// Expand one image (ci×h×w) into columns of the block matrix. Row
/// k = (ci·kh + r)·kw + q holds x[ci][oy·s + r − pad][ox·s + q − pad] per
/// output position (zero outside the image); the image's m() columns start
/// at `col_off`, and rows are `row_len` long.
fn im2col<T: Scalar>(x: &[T], g: &Geom, col: &mut [T], row_len: usize, col_off: usize, padded: &mut [T]) {
    debug_assert_eq!(x.len(), g.ci * g.h * g.w);
    let (m, ow, oh) = (g.m(), g.ow, g.oh);
    if g.stride == 1 {
        // Branch-free path: materialize the zero-padded plane once per
        // channel, then every kernel row is a contiguous window. Only the
        // interior is rewritten per channel, so zero the borders up front.
        padded.fill(T::zero());
        let w2 = g.w + 2 * g.pad;
        for c in 0..g.ci {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for iy in 0..g.h {
                padded[(iy + g.pad) * w2 + g.pad..(iy + g.pad) * w2 + g.pad + g.w]
                    .copy_from_slice(&plane[iy * g.w..(iy + 1) * g.w]);
            }
            for r in 0..g.kh {
                for q in 0..g.kw {
                    let k_row = (c * g.kh + r) * g.kw + q;
                    let dst = &mut col[k_row * row_len + col_off..k_row * row_len + col_off + m];
                    if ow < 16 {
                        // Narrow planes: indexed loop beats per-row memcpy.
                        for oy in 0..oh {
                            let base = (oy + r) * w2 + q;
                            for ox in 0..ow {
                                dst[oy * ow + ox] = padded[base + ox];
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            dst[oy * ow..(oy + 1) * ow]
                                .copy_from_slice(&padded[(oy + r) * w2 + q..(oy + r) * w2 + q + ow]);
                        }
                    }
                }
            }
        }
        return;
    }
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for r in 0..g.kh {
            // Valid output rows: 0 <= oy*stride + r - pad < h.
            let oy_lo = if r < g.pad { (g.pad - r).div_ceil(g.stride) } else { 0 };
            let oy_hi = ((g.h + g.pad).saturating_sub(r).div_ceil(g.stride)).min(oh);
            for q in 0..g.kw {
                let k_row = (c * g.kh + r) * g.kw + q;
                let dst = &mut col[k_row * row_len + col_off..k_row * row_len + col_off + m];
                dst[..oy_lo.min(oh) * ow].fill(T::zero());
                dst[oy_hi * ow..].fill(T::zero());
                let ox_lo = if q < g.pad { (g.pad - q).div_ceil(g.stride) } else { 0 };
                let ox_hi = ((g.w + g.pad).saturating_sub(q).div_ceil(g.stride)).min(ow);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + r - g.pad;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    drow[..ox_lo.min(ow)].fill(T::zero());
                    drow[ox_hi..].fill(T::zero());
                    for ox in ox_lo..ox_hi {
                        drow[ox] = src_row[ox * g.stride + q - g.pad];
                    }
                }
            }
        }
    }
}

/// Scatter-add block-matrix columns back onto an image (inverse of `im2col`
/// geometry). Used for the input gradient; `x` must be pre-zeroed.
fn col2im_accumulate<T: Scalar>(col: &[T], g: &Geom, row_len: usize, col_off: usize, x: &mut [T], padded: &mut [T]) {
    debug_assert_eq!(x.len(), g.ci * g.h * g.w);
    let (m, ow, oh) = (g.m(), g.ow, g.oh);
    if g.stride == 1 {
        let w2 = g.w + 2 * g.pad;
        for c in 0..g.ci {
            padded.fill(T::zero());
            for r in 0..g.kh {
                for q in 0..g.kw {
                    let k_row = (c * g.kh + r) * g.kw + q;
                    let src = &col[k_row * row_len + col_off..k_row * row_len + col_off + m];
                    if ow < 16 {
                        for oy in 0..oh {
                            let base = (oy + r) * w2 + q;
                            for ox in 0..ow {
                                padded[base + ox] = padded[base + ox] + src[oy * ow + ox];
                            }
                        }
                    } else {
                        for oy in 0..oh {
                            add_assign(
                                &mut padded[(oy + r) * w2 + q..(oy + r) * w2 + q + ow],
                                &src[oy * ow..(oy + 1) * ow],
                            );
                        }
                    }
                }
            }
            let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for iy in 0..g.h {
                plane[iy * g.w..(iy + 1) * g.w]
                    .copy_from_slice(&padded[(iy + g.pad) * w2 + g.pad..(iy + g.pad) * w2 + g.pad + g.w]);
            }
        }
        return;
    }
    for c in 0..g.ci {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for r in 0..g.kh {
            let oy_lo = if r < g.pad { (g.pad - r).div_ceil(g.stride) } else { 0 };
            let oy_hi = ((g.h + g.pad).saturating_sub(r).div_ceil(g.stride)).min(oh);
            for q in 0..g.kw {
                let k_row = (c * g.kh + r) * g.kw + q;
                let src = &col[k_row * row_len + col_off..k_row * row_len + col_off + m];
                let ox_lo = if q < g.pad { (g.pad - q).div_ceil(g.stride) } else { 0 };
                let ox_hi = ((g.w + g.pad).saturating_sub(q).div_ceil(g.stride)).min(ow);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + r - g.pad;
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in ox_lo..ox_hi {
                        let ix = ox * g.stride + q - g.pad;
                        dst_row[ix] = dst_row[ix] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

#[allow(clippy::type_complexity)]
pub(crate) fn check_conv_shapes<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Geom), NnError> {
    let (n, ci, h, wd) = x.try_dims4().map_err(|detail| NnError::ShapeMismatch { op, detail })?;
    let (co, wci, kh, kw) = w.try_dims4().map_err(|detail| NnError::ShapeMismatch { op, detail })?;
    if wci != ci {
        return Err(NnError::ShapeMismatch {
            op,
            detail: format!("input has {ci} channels but weight expects {wci}"),
        });
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(NnError::ShapeMismatch {
            op,
            detail: format!("kernel {kh}x{kw} exceeds padded input {h}x{wd} (pad {pad})"),
        });
    }
    if stride == 0 {
        return Err(NnError::ShapeMismatch { op, detail: "stride must be positive".into() });
    }
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(wd, kw, stride, pad);
    Ok((n, co, Geom { ci, h, w: wd, kh, kw, stride, pad, oh, ow }))
}

/// Forward convolution: x (n,ci,h,w) ⊛ w (co,ci,kh,kw) → (n,co,oh,ow).
/// No bias: every conv in the network is followed by batch norm.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    scratch: &mut ConvScratch<T>,
) -> Result<Tensor<T>, NnError> {
    let (n, co, g) = check_conv_shapes("conv2d_forward", x, w, stride, pad)?;
    let (k_dim, m, img_len) = (g.k_dim(), g.m(), g.ci * g.h * g.w);
    let ib = images_per_block(k_dim, m, n);
    ensure(&mut scratch.col, k_dim * ib * m);
    ensure(&mut scratch.ybuf, co * ib * m);
    ensure(&mut scratch.padded, g.padded_len());
    let mut y = Tensor::zeros(vec![n, co, g.oh, g.ow]);
    let mut img0 = 0;
    while img0 < n {
        let bs = ib.min(n - img0);
        let cols = bs * m;
        for bi in 0..bs {
            let img = img0 + bi;
            im2col(&x.data()[img * img_len..(img + 1) * img_len], &g, &mut scratch.col, cols, bi * m, &mut scratch.padded[..g.padded_len()]);
        }
        gemm_nn(co, k_dim, cols, w.data(), &scratch.col[..k_dim * cols], &mut scratch.ybuf[..co * cols], false);
        for bi in 0..bs {
            let img = img0 + bi;
            let dst = &mut y.data_mut()[img * co * m..(img + 1) * co * m];
            for c in 0..co {
                dst[c * m..(c + 1) * m].copy_from_slice(&scratch.ybuf[c * cols + bi * m..c * cols + bi * m + m]);
            }
        }
        img0 += bs;
    }
    Ok(y)
}

/// Backward convolution. Returns the weight gradient in `dw` and, when `dx`
/// is `Some`, the input gradient (overwritten, same shape as `x`).
///
/// The weight gradient accumulates image contributions in ascending image
/// order, so it is identical no matter how images are blocked.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
    dw: &mut Tensor<T>,
    mut dx: Option<&mut Tensor<T>>,
    scratch: &mut ConvScratch<T>,
) -> Result<(), NnError> {
    let (n, co, g) = check_conv_shapes("conv2d_backward", x, w, stride, pad)?;
    let (gn, gco, goh, gow) =
        gout.try_dims4().map_err(|detail| NnError::ShapeMismatch { op: "conv2d_backward", detail })?;
    if (gn, gco, goh, gow) != (n, co, g.oh, g.ow) {
        return Err(NnError::ShapeMismatch {
            op: "conv2d_backward",
            detail: format!("gout shape {:?} does not match expected [{n}, {co}, {}, {}]", gout.shape(), g.oh, g.ow),
        });
    }
    if dw.shape() != w.shape() {
        return Err(NnError::ShapeMismatch {
            op: "conv2d_backward",
            detail: format!("dw shape {:?} does not match weight {:?}", dw.shape(), w.shape()),
        });
    }
    if let Some(dx) = dx.as_deref_mut() {
        if dx.shape() != x.shape() {
            return Err(NnError::ShapeMismatch {
                op: "conv2d_backward",
                detail: format!("dx shape {:?} does not match input {:?}", dx.shape(), x.shape()),
            });
        }
        dx.data_mut().fill(T::zero());
    }
    let (k_dim, m, img_len) = (g.k_dim(), g.m(), g.ci * g.h * g.w);
    let ib = images_per_block(k_dim, m, n);
    ensure(&mut scratch.col, k_dim * ib * m);
    ensure(&mut scratch.gout_t, ib * m * co);
    ensure(&mut scratch.dwt, k_dim * co);
    ensure(&mut scratch.padded, g.padded_len());
    scratch.dwt[..k_dim * co].fill(T::zero());
    if dx.is_some() {
        ensure(&mut scratch.dcol, k_dim * ib * m);
        ensure(&mut scratch.w_t, k_dim * co);
        ensure(&mut scratch.ybuf, co * ib * m);
        transpose(co, k_dim, w.data(), &mut scratch.w_t[..k_dim * co]);
    }

    let mut img0 = 0;
    while img0 < n {
        let bs = ib.min(n - img0);
        let cols = bs * m;
        for bi in 0..bs {
            let img = img0 + bi;
            let g_img = &gout.data()[img * co * m..(img + 1) * co * m];
            im2col(&x.data()[img * img_len..(img + 1) * img_len], &g, &mut scratch.col, cols, bi * m, &mut scratch.padded[..g.padded_len()]);
            // gout^T block rows: gout_t[(bi·m + j)][c] = gout[img][c][j]
            for c in 0..co {
                for j in 0..m {
                    scratch.gout_t[(bi * m + j) * co + c] = g_img[c * m + j];
                }
            }
        }
        // dW^T (k_dim×co) += col · gout^T, image-major k order.
        gemm_nn(k_dim, cols, co, &scratch.col[..k_dim * cols], &scratch.gout_t[..cols * co], &mut scratch.dwt[..k_dim * co], true);
        if let Some(dx) = dx.as_deref_mut() {
            // gout block (co × cols), columns grouped per image.
            for bi in 0..bs {
                let img = img0 + bi;
                let g_img = &gout.data()[img * co * m..(img + 1) * co * m];
                for c in 0..co {
                    scratch.ybuf[c * cols + bi * m..c * cols + bi * m + m].copy_from_slice(&g_img[c * m..(c + 1) * m]);
                }
            }
            // dcol (k_dim×cols) = W^T · gout, scattered back to image layout.
            gemm_nn(k_dim, co, cols, &scratch.w_t[..k_dim * co], &scratch.ybuf[..co * cols], &mut scratch.dcol[..k_dim * cols], false);
            for bi in 0..bs {
                let img = img0 + bi;
                col2im_accumulate(
                    &scratch.dcol[..k_dim * cols],
                    &g,
                    cols,
                    bi * m,
                    &mut dx.data_mut()[img * img_len..(img + 1) * img_len],
                    &mut scratch.padded[..g.padded_len()],
                );
            }
        }
        img0 += bs;
    }
    transpose(k_dim, co, &scratch.dwt[..k_dim * co], dw.data_mut());
    Ok(())
}
