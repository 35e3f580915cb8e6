//! Matrix kernels behind the convolution and linear layers.
//!
//! Every kernel keeps one accumulator per output element and walks the
//! shared dimension in ascending index order with fused multiply-adds.
//! The SIMD tiers vectorize across *output* elements only, so each
//! element sees the exact same arithmetic sequence as the scalar
//! reference, and results are bit-identical across tiers, thread counts,
//! and runs.

use std::cell::RefCell;
use std::sync::OnceLock;

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimdLevel {
    Scalar,
    Avx2,
    Avx512,
}

static SIMD_LEVEL: OnceLock<SimdLevel> = OnceLock::new();

/// Active SIMD tier. Honors `LANDCOVER_SIMD=scalar|avx2|avx512` for testing;
/// otherwise picks the widest tier the CPU supports.
pub fn simd_level() -> SimdLevel {
    *SIMD_LEVEL.get_or_init(|| {
        let requested = std::env::var("LANDCOVER_SIMD").ok();
        match requested.as_deref() {
            Some("scalar") => return SimdLevel::Scalar,
            Some("avx2") => {
                return if avx2_available() { SimdLevel::Avx2 } else { SimdLevel::Scalar };
            }
            Some("avx512") => {
                return if avx512_available() { SimdLevel::Avx512 } else { SimdLevel::Scalar };
            }
            _ => {}
        }
        if avx512_available() {
            SimdLevel::Avx512
        } else if avx2_available() {
            SimdLevel::Avx2
        } else {
            SimdLevel::Scalar
        }
    })
}

#[cfg(target_arch = "x86_64")]
fn avx2_available() -> bool {
    std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
}

#[cfg(target_arch = "x86_64")]
fn avx512_available() -> bool {
    std::arch::is_x86_feature_detected!("avx512f")
}

#[cfg(not(target_arch = "x86_64"))]
fn avx2_available() -> bool {
    false
}

#[cfg(not(target_arch = "x86_64"))]
fn avx512_available() -> bool {
    false
}

/// C(m×n) = A(m×k) · B(k×n), all row-major dense. With `accumulate` the
/// product is added onto the existing C values; the per-element k-order is
/// unchanged either way.
pub fn gemm_nn<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm_nn: A size");
    assert_eq!(b.len(), k * n, "gemm_nn: B size");
    assert_eq!(c.len(), m * n, "gemm_nn: C size");
    T::gemm_nn_impl(m, k, n, a, b, c, accumulate);
}

/// Row-major transpose of an m×n matrix into an n×m buffer.
pub fn transpose<T: Copy>(m: usize, n: usize, src: &[T], dst: &mut [T]) {
    assert_eq!(src.len(), m * n);
    assert_eq!(dst.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            dst[j * m + i] = src[i * n + j];
        }
    }
}

pub(crate) fn gemm_nn_ref<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let mut acc = if accumulate { c_row[j] } else { T::zero() };
            for (kk, &aik) in a_row.iter().enumerate() {
                acc = aik.mul_add(b[kk * n + j], acc);
            }
            c_row[j] = acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
pub(crate) mod x86 {
    //! AVX2/AVX-512 f32 kernels. Per output element the accumulation is a
    //! sequential fused multiply-add chain over k, matching the scalar
    //! reference bit for bit. B is repacked into dense k×NR panels so the
    //! inner loop streams contiguously.

    use super::RefCell;

    const MR: usize = 8;

    thread_local! {
        static PANEL: RefCell<Vec<f32>> = const { RefCell::new(Vec::new()) };
    }

    fn with_panel<R>(len: usize, f: impl FnOnce(&mut [f32]) -> R) -> R {
        PANEL.with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < len {
                p.resize(len, 0.0);
            }
            f(&mut p[..len])
        })
    }

    /// Pack B[k0..k0+kc][j0..j0+nr] into a dense kc×NR panel, zero-filling
    /// the tail lanes so kernels can issue full-width loads.
    fn pack_b_rows<const NR: usize>(k0: usize, kc: usize, n: usize, j0: usize, nr: usize, b: &[f32], panel: &mut [f32]) {
        debug_assert!(nr <= NR);
        for kk in 0..kc {
            let src = &b[(k0 + kk) * n + j0..(k0 + kk) * n + j0 + nr];
            let dst = &mut panel[kk * NR..kk * NR + NR];
            dst[..nr].copy_from_slice(src);
            dst[nr..].fill(0.0);
        }
    }

    fn lane_mask(nr: usize, slab: usize) -> u16 {
        let lo = slab * 16;
        if nr >= lo + 16 {
            0xffff
        } else if nr > lo {
            ((1u32 << (nr - lo)) - 1) as u16
        } else {
            0
        }
    }

    pub(crate) fn gemm_nn_f32_avx512(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        b: &[f32],
        c: &mut [f32],
        accumulate: bool,
    ) {
        // Wide tiles (64 columns) halve the number of passes over A, which
        // matters when A is a large column matrix; narrow or short-k
        // problems use the 32-column kernel, whose smaller tile set-up
        // amortizes better.
        if n >= 48 && k >= 48 {
            return gemm_nn_f32_avx512_nr64(m, k, n, a, b, c, accumulate);
        }
        const NR: usize = 32;
        // Keep the packed panel L2-resident: process k in chunks, chaining
        // with accumulate=true so per-element order is unchanged.
        const KC: usize = 2048;
        with_panel(k.min(KC) * NR, |panel| {
            let mut k0 = 0;
            loop {
                let kc = KC.min(k - k0);
                let acc = accumulate || k0 > 0;
                let mut j0 = 0;
                while j0 < n {
                    let nr = NR.min(n - j0);
                    pack_b_rows::<NR>(k0, kc, n, j0, nr, b, panel);
                    let m0 = lane_mask(nr, 0);
                    let m1 = lane_mask(nr, 1);
                    let mut i0 = 0;
                    while i0 < m {
                        let mr = MR.min(m - i0);
                        unsafe {
                            kern_f32_avx512(
                                mr,
                                kc,
                                a.as_ptr().add(i0 * k + k0),
                                k,
                                panel.as_ptr(),
                                c.as_mut_ptr().add(i0 * n + j0),
                                n,
                                m0,
                                m1,
                                acc,
                            );
                        }
                        i0 += MR;
                    }
                    j0 += NR;
                }
                k0 += kc;
                if k0 >= k {
                    break;
                }
            }
        });
    }

    fn gemm_nn_f32_avx512_nr64(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        b: &[f32],
        c: &mut [f32],
        accumulate: bool,
    ) {
        const NR: usize = 64;
        const MR6: usize = 6;
        const KC: usize = 1024;
        with_panel(k.min(KC) * NR, |panel| {
            let mut k0 = 0;
            loop {
                let kc = KC.min(k - k0);
                let acc = accumulate || k0 > 0;
                let mut j0 = 0;
                while j0 < n {
                    let nr = NR.min(n - j0);
                    pack_b_rows::<NR>(k0, kc, n, j0, nr, b, panel);
                    let masks = [lane_mask(nr, 0), lane_mask(nr, 1), lane_mask(nr, 2), lane_mask(nr, 3)];
                    let mut i0 = 0;
                    while i0 < m {
                        let mr = MR6.min(m - i0);
                        unsafe {
                            kern_f32_avx512_nr64(
                                mr,
                                kc,
                                a.as_ptr().add(i0 * k + k0),
                                k,
                                panel.as_ptr(),
                                c.as_mut_ptr().add(i0 * n + j0),
                                n,
                                masks,
                                acc,
                            );
                        }
                        i0 += MR6;
                    }
                    j0 += NR;
                }
                k0 += kc;
                if k0 >= k {
                    break;
                }
            }
        });
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx512f")]
    unsafe fn kern_f32_avx512_nr64(
        mr: usize,
        k: usize,
        a: *const f32,
        lda: usize,
        panel: *const f32,
        c: *mut f32,
        ldc: usize,
        masks: [u16; 4],
        accumulate: bool,
    ) {
        use std::arch::x86_64::*;
        const MR6: usize = 6;
        debug_assert!(mr >= 1 && mr <= MR6);
        let mut acc = [[_mm512_setzero_ps(); 4]; MR6];
        if accumulate {
            for i in 0..mr {
                for (s, &mask) in masks.iter().enumerate() {
                    acc[i][s] = _mm512_maskz_loadu_ps(mask, c.add(i * ldc + s * 16));
                }
            }
        }
        for kk in 0..k {
            let b0 = _mm512_loadu_ps(panel.add(kk * 64));
            let b1 = _mm512_loadu_ps(panel.add(kk * 64 + 16));
            let b2 = _mm512_loadu_ps(panel.add(kk * 64 + 32));
            let b3 = _mm512_loadu_ps(panel.add(kk * 64 + 48));
            for i in 0..MR6 {
                if i < mr {
                    let ai = _mm512_set1_ps(*a.add(i * lda + kk));
                    acc[i][0] = _mm512_fmadd_ps(ai, b0, acc[i][0]);
                    acc[i][1] = _mm512_fmadd_ps(ai, b1, acc[i][1]);
                    acc[i][2] = _mm512_fmadd_ps(ai, b2, acc[i][2]);
                    acc[i][3] = _mm512_fmadd_ps(ai, b3, acc[i][3]);
                }
            }
        }
        for i in 0..mr {
            for (s, &mask) in masks.iter().enumerate() {
                if mask != 0 {
                    _mm512_mask_storeu_ps(c.add(i * ldc + s * 16), mask, acc[i][s]);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx512f")]
    unsafe fn kern_f32_avx512(
        mr: usize,
        k: usize,
        a: *const f32,
        lda: usize,
        panel: *const f32,
        c: *mut f32,
        ldc: usize,
        m0: u16,
        m1: u16,
        accumulate: bool,
    ) {
        use std::arch::x86_64::*;
        debug_assert!(mr >= 1 && mr <= MR);
        let mut acc0 = [_mm512_setzero_ps(); MR];
        let mut acc1 = [_mm512_setzero_ps(); MR];
        if accumulate {
            for i in 0..mr {
                acc0[i] = _mm512_maskz_loadu_ps(m0, c.add(i * ldc));
                acc1[i] = _mm512_maskz_loadu_ps(m1, c.add(i * ldc + 16));
            }
        }
        for kk in 0..k {
            let b0 = _mm512_loadu_ps(panel.add(kk * 32));
            let b1 = _mm512_loadu_ps(panel.add(kk * 32 + 16));
            for i in 0..MR {
                if i < mr {
                    let ai = _mm512_set1_ps(*a.add(i * lda + kk));
                    acc0[i] = _mm512_fmadd_ps(ai, b0, acc0[i]);
                    acc1[i] = _mm512_fmadd_ps(ai, b1, acc1[i]);
                }
            }
        }
        for i in 0..mr {
            _mm512_mask_storeu_ps(c.add(i * ldc), m0, acc0[i]);
            if m1 != 0 {
                _mm512_mask_storeu_ps(c.add(i * ldc + 16), m1, acc1[i]);
            }
        }
    }

    pub(crate) fn gemm_nn_f32_avx2(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        b: &[f32],
        c: &mut [f32],
        accumulate: bool,
    ) {
        const NR: usize = 16;
        const KC: usize = 4096;
        with_panel(k.min(KC) * NR, |panel| {
            let mut k0 = 0;
            loop {
                let kc = KC.min(k - k0);
                let acc = accumulate || k0 > 0;
                let mut j0 = 0;
                while j0 < n {
                    let nr = NR.min(n - j0);
                    pack_b_rows::<NR>(k0, kc, n, j0, nr, b, panel);
                    let mut i0 = 0;
                    while i0 < m {
                        let mr = MR.min(m - i0);
                        unsafe {
                            kern_f32_avx2(
                                mr,
                                nr,
                                kc,
                                a.as_ptr().add(i0 * k + k0),
                                k,
                                panel.as_ptr(),
                                c.as_mut_ptr().add(i0 * n + j0),
                                n,
                                acc,
                            );
                        }
                        i0 += MR;
                    }
                    j0 += NR;
                }
                k0 += kc;
                if k0 >= k {
                    break;
                }
            }
        });
    }

    #[allow(clippy::too_many_arguments)]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn kern_f32_avx2(
        mr: usize,
        nr: usize,
        k: usize,
        a: *const f32,
        lda: usize,
        panel: *const f32,
        c: *mut f32,
        ldc: usize,
        accumulate: bool,
    ) {
        use std::arch::x86_64::*;
        debug_assert!(mr >= 1 && mr <= MR && nr >= 1 && nr <= 16);
        let mask_for = |lanes: usize| -> __m256i {
            let mut v = [0i32; 8];
            for (l, slot) in v.iter_mut().enumerate() {
                if l < lanes {
                    *slot = -1;
                }
            }
            _mm256_loadu_si256(v.as_ptr() as *const __m256i)
        };
        let n0 = nr.min(8);
        let n1 = nr.saturating_sub(8);
        let m0v = mask_for(n0);
        let m1v = mask_for(n1);
        let mut acc0 = [_mm256_setzero_ps(); MR];
        let mut acc1 = [_mm256_setzero_ps(); MR];
        if accumulate {
            for i in 0..mr {
                acc0[i] = _mm256_maskload_ps(c.add(i * ldc), m0v);
                if n1 > 0 {
                    acc1[i] = _mm256_maskload_ps(c.add(i * ldc + 8), m1v);
                }
            }
        }
        for kk in 0..k {
            let b0 = _mm256_loadu_ps(panel.add(kk * 16));
            let b1 = _mm256_loadu_ps(panel.add(kk * 16 + 8));
            for i in 0..MR {
                if i < mr {
                    let ai = _mm256_set1_ps(*a.add(i * lda + kk));
                    acc0[i] = _mm256_fmadd_ps(ai, b0, acc0[i]);
                    acc1[i] = _mm256_fmadd_ps(ai, b1, acc1[i]);
                }
            }
        }
        for i in 0..mr {
            _mm256_maskstore_ps(c.add(i * ldc), m0v, acc0[i]);
            if n1 > 0 {
                _mm256_maskstore_ps(c.add(i * ldc + 8), m1v, acc1[i]);
            }
        }
    }

    /// dst += src, element-wise (used by fold/scatter paths).
    pub(crate) fn add_assign_f32(dst: &mut [f32], src: &[f32]) {
        debug_assert_eq!(dst.len(), src.len());
        if super::simd_level() != super::SimdLevel::Scalar {
            unsafe { add_assign_f32_avx2(dst, src) }
        } else {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    #[target_feature(enable = "avx2")]
    unsafe fn add_assign_f32_avx2(dst: &mut [f32], src: &[f32]) {
        use std::arch::x86_64::*;
        let n = dst.len();
        let d = dst.as_mut_ptr();
        let s = src.as_ptr();
        let mut i = 0;
        while i + 8 <= n {
            let v = _mm256_add_ps(_mm256_loadu_ps(d.add(i)), _mm256_loadu_ps(s.add(i)));
            _mm256_storeu_ps(d.add(i), v);
            i += 8;
        }
        while i < n {
            *d.add(i) += *s.add(i);
            i += 1;
        }
    }
}

/// dst += src element-wise with the fastest available path.
pub fn add_assign<T: Scalar>(dst: &mut [T], src: &[T]) {
    assert_eq!(dst.len(), src.len());
    T::add_assign_impl(dst, src);
}

pub(crate) fn add_assign_ref<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
        (0..len).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn simd_tiers_match_reference_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(m, k, n) in &[
            (1usize, 1usize, 1usize),
            (3, 5, 7),
            (8, 16, 32),
            (9, 17, 33),
            (13, 64, 50),
            (64, 100, 100),
            (5, 0, 3),
        ] {
            let a = random_mat(&mut rng, m * k);
            let b = random_mat(&mut rng, k * n);
            let c_init = random_mat(&mut rng, m * n);
            for acc in [false, true] {
                let mut c_ref = c_init.clone();
                gemm_nn_ref(m, k, n, &a, &b, &mut c_ref, acc);
                #[cfg(target_arch = "x86_64")]
                {
                    if std::arch::is_x86_feature_detected!("avx512f") {
                        let mut c = c_init.clone();
                        x86::gemm_nn_f32_avx512(m, k, n, &a, &b, &mut c, acc);
                        let got: Vec<u32> = c.iter().map(|v| v.to_bits()).collect();
                        let want: Vec<u32> = c_ref.iter().map(|v| v.to_bits()).collect();
                        assert_eq!(got, want, "avx512 nn mismatch at {m}x{k}x{n} acc={acc}");
                    }
                    if std::arch::is_x86_feature_detected!("avx2") {
                        let mut c = c_init.clone();
                        x86::gemm_nn_f32_avx2(m, k, n, &a, &b, &mut c, acc);
                        assert_eq!(c, c_ref, "avx2 nn mismatch at {m}x{k}x{n} acc={acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn gemm_nn_identity() {
        let n = 4;
        let mut a = vec![0.0f32; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        let b: Vec<f32> = (0..n * n).map(|v| v as f32).collect();
        let mut c = vec![0.0f32; n * n];
        gemm_nn(n, n, n, &a, &b, &mut c, false);
        assert_eq!(c, b);
    }

    #[test]
    fn transpose_round_trip() {
        let src: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let mut t = vec![0.0f32; 12];
        transpose(3, 4, &src, &mut t);
        let mut back = vec![0.0f32; 12];
        transpose(4, 3, &t, &mut back);
        assert_eq!(src, back);
    }
}
