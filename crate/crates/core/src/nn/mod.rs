//! Deterministic CPU deep-learning core.
//!
//! Everything here is plain Rust over `f32`/`f64` slices: tensors, conv /
//! batch-norm / pooling / linear layers with forward and backward passes, a
//! four-channel residual classifier, label-smoothed cross-entropy, and SGD
//! with momentum. Given the same seed, config, and sample order, training
//! produces bit-identical parameters and metrics on every run. SIMD paths
//! keep per-element accumulation order fixed so optimized and scalar builds
//! agree exactly.

pub mod check;
pub mod checkpoint;
pub mod conv;
pub mod gemm;
pub mod layers;
pub mod loss;
pub mod model;
pub mod norm;
pub mod optim;
pub mod tensor;
pub mod train;

pub use gemm::{simd_level, SimdLevel};
pub use tensor::Tensor;

/// Errors surfaced by the deep-learning core.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch_index}")]
    DivergedLoss { epoch: usize, batch_index: usize },
    #[error("batch-norm evaluated before any running statistics were accumulated")]
    EvalBeforeStats,
    #[error("degenerate batch statistics: {detail}")]
    DegenerateStats { detail: String },
    #[error("checkpoint architecture mismatch: {detail}")]
    ArchMismatch { detail: String },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("bad checkpoint descriptor: {detail}")]
    BadDescriptor { detail: String },
    #[error("empty sample set: {detail}")]
    EmptySampleSet { detail: String },
    #[error("missing split {split:?} in manifest")]
    MissingSplit { split: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floating-point element type for tensors and kernels.
///
/// `f32` routes matrix products through the SIMD tiers; `f64` always uses the
/// scalar reference (it exists for oracles and gradient checks).
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    #[allow(clippy::too_many_arguments)]
    fn gemm_nn_impl(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self], accumulate: bool) {
        gemm::gemm_nn_ref(m, k, n, a, b, c, accumulate);
    }

    fn add_assign_impl(dst: &mut [Self], src: &[Self]) {
        gemm::add_assign_ref(dst, src);
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[cfg(target_arch = "x86_64")]
    fn gemm_nn_impl(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self], accumulate: bool) {
        match gemm::simd_level() {
            SimdLevel::Avx512 => gemm::x86::gemm_nn_f32_avx512(m, k, n, a, b, c, accumulate),
            SimdLevel::Avx2 => gemm::x86::gemm_nn_f32_avx2(m, k, n, a, b, c, accumulate),
            SimdLevel::Scalar => gemm::gemm_nn_ref(m, k, n, a, b, c, accumulate),
        }
    }

    #[cfg(target_arch = "x86_64")]
    fn add_assign_impl(dst: &mut [Self], src: &[Self]) {
        gemm::x86::add_assign_f32(dst, src);
    }
}
