//! Residual CNN classifier over 4-band 32×32 tiles.
//!
//! The network is a pre-activation-free (classic) residual net:
//! stem → 4 stages of basic blocks → global average pool → linear head.
//! Each basic block is conv3×3–BN–ReLU–conv3×3–BN plus a skip connection
//! (identity, or 1×1 stride-2 conv + BN when the block downsamples),
//! followed by a final ReLU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::conv::{conv2d_forward, ConvScratch};
use super::gemm::add_assign;
use super::layers::{
    global_avg_pool_backward, global_avg_pool_forward, linear_backward, linear_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward_inplace, relu_inplace,
};
use super::norm::{BatchNorm2d, BnCache};
use super::tensor::Tensor;
use super::{NnError, Scalar};

/// First-layer geometry. `Cifar` keeps 32×32 inputs at full resolution;
/// `Imagenet` is the stride-2 7×7 stem with a following max-pool for
/// large-tile experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StemKind {
    Cifar,
    Imagenet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stem: StemKind,
    pub stage_blocks: [usize; 4],
    pub stage_widths: [usize; 4],
    pub in_channels: usize,
    pub n_classes: usize,
}

impl ModelConfig {
    /// Named presets: `"r34"` is the full 34-layer arrangement at the
    /// standard widths; `"compact"` is a one-block-per-stage, quarter-width
    /// variant sized so a full desk-scale training run stays in the minutes
    /// range on a single CPU core.
    pub fn preset(name: &str) -> Result<Self, NnError> {
        let (stage_blocks, stage_widths) = match name {
            "r34" => ([3, 4, 6, 3], [64, 128, 256, 512]),
            "compact" => ([1, 1, 1, 1], [16, 32, 64, 128]),
            other => {
                return Err(NnError::BadDescriptor {
                    detail: format!("unknown model preset '{other}' (expected 'r34' or 'compact')"),
                })
            }
        };
        Ok(Self {
            stem: StemKind::Cifar,
            stage_blocks,
            stage_widths,
            in_channels: 4,
            n_classes: 5,
        })
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.in_channels > 0
            && self.n_classes >= 2
            && self.stage_blocks.iter().all(|&b| b >= 1)
            && self.stage_widths.iter().all(|&w| w >= 1);
        if ok {
            Ok(())
        } else {
            Err(NnError::BadDescriptor { detail: format!("invalid model config: {self:?}") })
        }
    }
}

/// A learnable tensor with its gradient and momentum buffer. The gradient is
/// fully overwritten by every backward pass, so there is no explicit zeroing.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub buf: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub(crate) fn new(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self { value, grad: Tensor::zeros(shape.clone()), buf: Tensor::zeros(shape) }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d<T> {
    pub(crate) w: Param<T>,
    pub(crate) stride: usize,
    pub(crate) pad: usize,
}

/// Batch norm plus the gradient/momentum state for its two parameter vectors.
#[derive(Debug, Clone)]
pub(crate) struct BnLayer<T> {
    pub(crate) bn: BatchNorm2d<T>,
    pub(crate) dgamma: Tensor<T>,
    pub(crate) dbeta: Tensor<T>,
    gamma_buf: Tensor<T>,
    beta_buf: Tensor<T>,
}

impl<T: Scalar> BnLayer<T> {
    pub(crate) fn new(channels: usize) -> Self {
        Self {
            bn: BatchNorm2d::new(channels),
            dgamma: Tensor::zeros(vec![channels]),
            dbeta: Tensor::zeros(vec![channels]),
            gamma_buf: Tensor::zeros(vec![channels]),
            beta_buf: Tensor::zeros(vec![channels]),
        }
    }

    fn set_grads(&mut self, dgamma: Tensor<T>, dbeta: Tensor<T>) {
        self.dgamma = dgamma;
        self.dbeta = dbeta;
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block<T> {
    pub(crate) conv1: Conv2d<T>,
    pub(crate) bn1: BnLayer<T>,
    pub(crate) conv2: Conv2d<T>,
    pub(crate) bn2: BnLayer<T>,
    /// 1×1 stride-2 projection on the skip path when the block downsamples.
    pub(crate) proj: Option<(Conv2d<T>, BnLayer<T>)>,
}

/// Everything a block's backward pass needs from its forward pass.
pub struct BlockCache<T> {
    x_in: Tensor<T>,
    c1: Tensor<T>,
    bc1: BnCache<T>,
    r1: Tensor<T>,
    c2: Tensor<T>,
    bc2: BnCache<T>,
    proj: Option<(Tensor<T>, BnCache<T>)>,
}

impl<T: Scalar> Block<T> {
    pub(crate) fn forward_train(
        &mut self,
        x: Tensor<T>,
        scratch: &mut ConvScratch<T>,
    ) -> Result<(Tensor<T>, BlockCache<T>), NnError> {
        let c1 = conv2d_forward(&x, &self.conv1.w.value, self.conv1.stride, self.conv1.pad, scratch)?;
        let (mut r1, bc1) = self.bn1.bn.forward_train(&c1)?;
        relu_inplace(&mut r1);
        let c2 = conv2d_forward(&r1, &self.conv2.w.value, self.conv2.stride, self.conv2.pad, scratch)?;
        let (mut y, bc2) = self.bn2.bn.forward_train(&c2)?;
        let proj_cache = match &mut self.proj {
            Some((pc, pb)) => {
                let xp = conv2d_forward(&x, &pc.w.value, pc.stride, pc.pad, scratch)?;
                let (skip, bcp) = pb.bn.forward_train(&xp)?;
                add_assign(y.data_mut(), skip.data());
                Some((xp, bcp))
            }
            None => {
                add_assign(y.data_mut(), x.data());
                None
            }
        };
        relu_inplace(&mut y);
        Ok((y, BlockCache { x_in: x, c1, bc1, r1, c2, bc2, proj: proj_cache }))
    }

    fn forward_eval(&self, x: &Tensor<T>, scratch: &mut ConvScratch<T>) -> Result<Tensor<T>, NnError> {
        let c1 = conv2d_forward(x, &self.conv1.w.value, self.conv1.stride, self.conv1.pad, scratch)?;
        let mut r1 = self.bn1.bn.forward_eval(&c1)?;
        relu_inplace(&mut r1);
        let c2 = conv2d_forward(&r1, &self.conv2.w.value, self.conv2.stride, self.conv2.pad, scratch)?;
        let mut y = self.bn2.bn.forward_eval(&c2)?;
        match &self.proj {
            Some((pc, pb)) => {
                let xp = conv2d_forward(x, &pc.w.value, pc.stride, pc.pad, scratch)?;
                let skip = pb.bn.forward_eval(&xp)?;
                add_assign(y.data_mut(), skip.data());
            }
            None => add_assign(y.data_mut(), x.data()),
        }
        relu_inplace(&mut y);
        Ok(y)
    }

    /// `y` is this block's forward output (used for the final ReLU mask);
    /// `dy` is the loss gradient with respect to it. Returns the gradient
    /// with respect to the block input; parameter gradients are stored.
    pub(crate) fn backward(
        &mut self,
        cache: &BlockCache<T>,
        y: &Tensor<T>,
        mut dy: Tensor<T>,
        scratch: &mut ConvScratch<T>,
    ) -> Result<Tensor<T>, NnError> {
        relu_backward_inplace(y, &mut dy);
        let (dc2, dg2, db2) = self.bn2.bn.backward(&cache.c2, &cache.bc2, &dy)?;
        self.bn2.set_grads(dg2, db2);
        let mut dr1 = Tensor::zeros(cache.r1.shape().to_vec());
        conv2d_backward(
            &cache.r1,
            &self.conv2.w.value,
            &dc2,
            self.conv2.stride,
            self.conv2.pad,
            &mut self.conv2.w.grad,
            Some(&mut dr1),
            scratch,
        )?;
        relu_backward_inplace(&cache.r1, &mut dr1);
        let (dc1, dg1, db1) = self.bn1.bn.backward(&cache.c1, &cache.bc1, &dr1)?;
        self.bn1.set_grads(dg1, db1);
        let mut dx = Tensor::zeros(cache.x_in.shape().to_vec());
        conv2d_backward(
            &cache.x_in,
            &self.conv1.w.value,
            &dc1,
            self.conv1.stride,
            self.conv1.pad,
            &mut self.conv1.w.grad,
            Some(&mut dx),
            scratch,
        )?;
        match (&mut self.proj, &cache.proj) {
            (Some((pc, pb)), Some((xp, bcp))) => {
                let (dxp, dgp, dbp) = pb.bn.backward(xp, bcp, &dy)?;
                pb.set_grads(dgp, dbp);
                let mut dskip = Tensor::zeros(cache.x_in.shape().to_vec());
                conv2d_backward(
                    &cache.x_in,
                    &pc.w.value,
                    &dxp,
                    pc.stride,
                    pc.pad,
                    &mut pc.w.grad,
                    Some(&mut dskip),
                    scratch,
                )?;
                add_assign(dx.data_mut(), dskip.data());
            }
            (None, None) => add_assign(dx.data_mut(), dy.data()),
            _ => unreachable!("projection state and cache always agree"),
        }
        Ok(dx)
    }
}

use super::conv::conv2d_backward;

/// Forward-pass state kept for the backward pass.
pub struct FwdCache<T> {
    x0: Tensor<T>,
    s0: Tensor<T>,
    sb: BnCache<T>,
    /// Pre-pool stem activation; present only for the `Imagenet` stem
    /// (with the `Cifar` stem the stem output IS the first block input).
    pool_in: Option<Tensor<T>>,
    pool_idx: Option<Vec<u32>>,
    blocks: Vec<BlockCache<T>>,
    last: Tensor<T>,
    feats: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ResNet<T> {
    pub cfg: ModelConfig,
    stem_conv: Conv2d<T>,
    stem_bn: BnLayer<T>,
    blocks: Vec<Block<T>>,
    fc_w: Param<T>,
    fc_b: Param<T>,
}

fn he_conv<T: Scalar>(rng: &mut ChaCha8Rng, co: usize, ci: usize, kh: usize, kw: usize) -> Tensor<T> {
    // He-normal with fan-out = co·kh·kw, matching the reference recipe.
    let std = (2.0 / (co * kh * kw) as f64).sqrt();
    let normal = Normal::new(0.0f64, std).expect("std is finite and positive");
    let data = (0..co * ci * kh * kw).map(|_| T::from_f64(normal.sample(rng))).collect();
    Tensor::new(vec![co, ci, kh, kw], data)
}

impl<T: Scalar> ResNet<T> {
    /// Build the network with reproducible random initialization: convolutions
    /// are He-normal (fan-out), batch norms start at γ=1, β=0, and the linear
    /// head is uniform ±1/√fan_in. The same seed always yields the same
    /// parameters, in the canonical parameter order.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = cfg.stage_widths[0];
        let stem_conv = match cfg.stem {
            StemKind::Cifar => {
                Conv2d { w: Param::new(he_conv(&mut rng, w0, cfg.in_channels, 3, 3)), stride: 1, pad: 1 }
            }
            StemKind::Imagenet => {
                Conv2d { w: Param::new(he_conv(&mut rng, w0, cfg.in_channels, 7, 7)), stride: 2, pad: 3 }
            }
        };
        let stem_bn = BnLayer::new(w0);
        let mut blocks = Vec::new();
        let mut in_ch = w0;
        for (si, (&n_blocks, &width)) in cfg.stage_blocks.iter().zip(&cfg.stage_widths).enumerate() {
            for bi in 0..n_blocks {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let needs_proj = stride != 1 || in_ch != width;
                let conv1 =
                    Conv2d { w: Param::new(he_conv(&mut rng, width, in_ch, 3, 3)), stride, pad: 1 };
                let conv2 = Conv2d { w: Param::new(he_conv(&mut rng, width, width, 3, 3)), stride: 1, pad: 1 };
                let proj = if needs_proj {
                    let pc = Conv2d { w: Param::new(he_conv(&mut rng, width, in_ch, 1, 1)), stride, pad: 0 };
                    Some((pc, BnLayer::new(width)))
                } else {
                    None
                };
                blocks.push(Block { conv1, bn1: BnLayer::new(width), conv2, bn2: BnLayer::new(width), proj });
                in_ch = width;
            }
        }
        let feat = cfg.stage_widths[3];
        let bound = 1.0 / (feat as f64).sqrt();
        let uni = Uniform::new(-bound, bound).expect("bound is finite");
        let wdata = (0..cfg.n_classes * feat).map(|_| T::from_f64(uni.sample(&mut rng))).collect();
        let bdata = (0..cfg.n_classes).map(|_| T::from_f64(uni.sample(&mut rng))).collect();
        let fc_w = Param::new(Tensor::new(vec![cfg.n_classes, feat], wdata));
        let fc_b = Param::new(Tensor::new(vec![cfg.n_classes], bdata));
        Ok(Self { cfg, stem_conv, stem_bn, blocks, fc_w, fc_b })
    }

    fn stem_forward_common(
        &mut self,
        x: &Tensor<T>,
        scratch: &mut ConvScratch<T>,
    ) -> Result<(Tensor<T>, BnCache<T>, Tensor<T>), NnError> {
        let s0 = conv2d_forward(x, &self.stem_conv.w.value, self.stem_conv.stride, self.stem_conv.pad, scratch)?;
        let (mut sr, sb) = self.stem_bn.bn.forward_train(&s0)?;
        relu_inplace(&mut sr);
        Ok((s0, sb, sr))
    }

    /// Training-mode forward: batch statistics, running-stat updates, and a
    /// cache for [`ResNet::backward`].
    pub fn forward_train(
        &mut self,
        x: &Tensor<T>,
        scratch: &mut ConvScratch<T>,
    ) -> Result<(Tensor<T>, FwdCache<T>), NnError> {
        let x0 = x.clone();
        let (s0, sb, sr) = self.stem_forward_common(x, scratch)?;
        let (mut cur, pool_in, pool_idx) = match self.cfg.stem {
            StemKind::Cifar => (sr, None, None),
            StemKind::Imagenet => {
                let (pooled, idx) = maxpool2d_forward(&sr, 3, 2, 1)?;
                (pooled, Some(sr), Some(idx))
            }
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &mut self.blocks {
            let (y, bc) = blk.forward_train(cur, scratch)?;
            caches.push(bc);
            cur = y;
        }
        let feats = global_avg_pool_forward(&cur)?;
        let logits = linear_forward(&feats, &self.fc_w.value, &self.fc_b.value)?;
        Ok((logits, FwdCache { x0, s0, sb, pool_in, pool_idx, blocks: caches, last: cur, feats }))
    }

    /// Inference-mode forward using running statistics. Logits for any one
    /// sample are bitwise independent of which other samples share the batch.
    pub fn forward_eval(&self, x: &Tensor<T>, scratch: &mut ConvScratch<T>) -> Result<Tensor<T>, NnError> {
        let s0 = conv2d_forward(x, &self.stem_conv.w.value, self.stem_conv.stride, self.stem_conv.pad, scratch)?;
        let mut cur = self.stem_bn.bn.forward_eval(&s0)?;
        relu_inplace(&mut cur);
        if self.cfg.stem == StemKind::Imagenet {
            cur = maxpool2d_forward(&cur, 3, 2, 1)?.0;
        }
        for blk in &self.blocks {
            cur = blk.forward_eval(&cur, scratch)?;
        }
        let feats = global_avg_pool_forward(&cur)?;
        linear_forward(&feats, &self.fc_w.value, &self.fc_b.value)
    }

    /// Backpropagate `dlogits` through the whole network, overwriting every
    /// parameter gradient.
    pub fn backward(
        &mut self,
        cache: &FwdCache<T>,
        dlogits: &Tensor<T>,
        scratch: &mut ConvScratch<T>,
    ) -> Result<(), NnError> {
        let (dfeat, dw, db) = linear_backward(&cache.feats, &self.fc_w.value, dlogits)?;
        self.fc_w.grad = dw;
        self.fc_b.grad = db;
        let mut dy = global_avg_pool_backward(&dfeat, cache.last.shape());
        for i in (0..self.blocks.len()).rev() {
            let y_i = if i + 1 < self.blocks.len() { &cache.blocks[i + 1].x_in } else { &cache.last };
            dy = self.blocks[i].backward(&cache.blocks[i], y_i, dy, scratch)?;
        }
        if let (Some(pool_in), Some(idx)) = (&cache.pool_in, &cache.pool_idx) {
            dy = maxpool2d_backward(idx, &dy, pool_in.shape());
        }
        let sr = cache.pool_in.as_ref().unwrap_or(&cache.blocks[0].x_in);
        relu_backward_inplace(sr, &mut dy);
        let (ds0, dg, db) = self.stem_bn.bn.backward(&cache.s0, &cache.sb, &dy)?;
        self.stem_bn.set_grads(dg, db);
        // The input gradient of the stem is never needed.
        conv2d_backward(
            &cache.x0,
            &self.stem_conv.w.value,
            &ds0,
            self.stem_conv.stride,
            self.stem_conv.pad,
            &mut self.stem_conv.w.grad,
            None,
            scratch,
        )
    }

    /// Walk every learnable parameter in canonical order:
    /// stem, then stages (conv1, bn1, conv2, bn2, [proj, proj_bn]), then head.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>, &mut Tensor<T>, &mut Tensor<T>)) {
        f("stem.conv.w", &mut self.stem_conv.w.value, &mut self.stem_conv.w.grad, &mut self.stem_conv.w.buf);
        f("stem.bn.gamma", &mut self.stem_bn.bn.gamma, &mut self.stem_bn.dgamma, &mut self.stem_bn.gamma_buf);
        f("stem.bn.beta", &mut self.stem_bn.bn.beta, &mut self.stem_bn.dbeta, &mut self.stem_bn.beta_buf);
        let names = self.block_names();
        for (blk, prefix) in self.blocks.iter_mut().zip(&names) {
            f(&format!("{prefix}.conv1.w"), &mut blk.conv1.w.value, &mut blk.conv1.w.grad, &mut blk.conv1.w.buf);
            f(&format!("{prefix}.bn1.gamma"), &mut blk.bn1.bn.gamma, &mut blk.bn1.dgamma, &mut blk.bn1.gamma_buf);
            f(&format!("{prefix}.bn1.beta"), &mut blk.bn1.bn.beta, &mut blk.bn1.dbeta, &mut blk.bn1.beta_buf);
            f(&format!("{prefix}.conv2.w"), &mut blk.conv2.w.value, &mut blk.conv2.w.grad, &mut blk.conv2.w.buf);
            f(&format!("{prefix}.bn2.gamma"), &mut blk.bn2.bn.gamma, &mut blk.bn2.dgamma, &mut blk.bn2.gamma_buf);
            f(&format!("{prefix}.bn2.beta"), &mut blk.bn2.bn.beta, &mut blk.bn2.dbeta, &mut blk.bn2.beta_buf);
            if let Some((pc, pb)) = &mut blk.proj {
                f(&format!("{prefix}.proj.w"), &mut pc.w.value, &mut pc.w.grad, &mut pc.w.buf);
                f(&format!("{prefix}.proj_bn.gamma"), &mut pb.bn.gamma, &mut pb.dgamma, &mut pb.gamma_buf);
                f(&format!("{prefix}.proj_bn.beta"), &mut pb.bn.beta, &mut pb.dbeta, &mut pb.beta_buf);
            }
        }
        f("fc.w", &mut self.fc_w.value, &mut self.fc_w.grad, &mut self.fc_w.buf);
        f("fc.b", &mut self.fc_b.value, &mut self.fc_b.grad, &mut self.fc_b.buf);
    }

    /// Walk the batch-norm running statistics in the same layer order as
    /// [`ResNet::visit_params_mut`].
    pub fn visit_stats_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("stem.bn.running_mean", &mut self.stem_bn.bn.running_mean);
        f("stem.bn.running_var", &mut self.stem_bn.bn.running_var);
        let names = self.block_names();
        for (blk, prefix) in self.blocks.iter_mut().zip(&names) {
            f(&format!("{prefix}.bn1.running_mean"), &mut blk.bn1.bn.running_mean);
            f(&format!("{prefix}.bn1.running_var"), &mut blk.bn1.bn.running_var);
            f(&format!("{prefix}.bn2.running_mean"), &mut blk.bn2.bn.running_mean);
            f(&format!("{prefix}.bn2.running_var"), &mut blk.bn2.bn.running_var);
            if let Some((_, pb)) = &mut blk.proj {
                f(&format!("{prefix}.proj_bn.running_mean"), &mut pb.bn.running_mean);
                f(&format!("{prefix}.proj_bn.running_var"), &mut pb.bn.running_var);
            }
        }
    }

    fn block_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.blocks.len());
        for (si, &n_blocks) in self.cfg.stage_blocks.iter().enumerate() {
            for bi in 0..n_blocks {
                names.push(format!("s{}.b{}", si + 1, bi));
            }
        }
        names
    }

    /// Mark every batch norm as having (or lacking) usable running statistics.
    /// Checkpoint loading sets this; a freshly initialized net has it unset.
    pub fn set_bn_initialized(&mut self, value: bool) {
        self.stem_bn.bn.initialized = value;
        for blk in &mut self.blocks {
            blk.bn1.bn.initialized = value;
            blk.bn2.bn.initialized = value;
            if let Some((_, pb)) = &mut blk.proj {
                pb.bn.initialized = value;
            }
        }
    }

    /// Whether the batch norms carry usable running statistics (true after
    /// at least one training batch or a checkpoint load that included them).
    pub fn bn_initialized(&self) -> bool {
        self.stem_bn.bn.initialized
    }

    pub fn param_count(&mut self) -> usize {
        let mut total = 0;
        self.visit_params_mut(&mut |_, v, _, _| total += v.numel());
        total
    }

    /// True when every parameter value is finite.
    pub fn params_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params_mut(&mut |_, v, _, _| ok &= v.is_finite());
        ok
    }
}
