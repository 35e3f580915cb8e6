//! Model checkpoints.
//!
//! Layout: 4-byte magic `CNN1`, a little-endian u32 giving the length of a
//! JSON descriptor, the descriptor itself, then raw little-endian f32 blobs
//! in exactly the order the descriptor lists them: learnable parameters,
//! batch-norm running statistics, and (when training metadata is present)
//! momentum buffers. Two identical training runs produce byte-identical
//! files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ResNet};
use super::tensor::Tensor;
use super::{NnError, Scalar};

pub const CHECKPOINT_MAGIC: &str = "CNN1";

/// Per-band normalization statistics, computed on the training split and
/// carried with the model so inference normalizes rasters the same way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Optional state for resuming training. RNG streams are derived from
/// (seed, epoch), so the seed and epoch fully determine the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: usize,
    pub seed: u64,
    /// When true, momentum buffers follow the running-stat blobs.
    pub momentum: bool,
}

/// Everything a checkpoint carries besides the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub band_stats: Option<BandStats>,
    /// Ground pixel size (x, y) the model was trained at, for resolution checks.
    pub pixel_size: Option<[f64; 2]>,
    pub class_names: Vec<String>,
    pub train_meta: Option<TrainMeta>,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self { band_stats: None, pixel_size: None, class_names: Vec::new(), train_meta: None }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    model: ModelConfig,
    bn_initialized: bool,
    params: Vec<TensorEntry>,
    stats: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

fn write_blob<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<(), NnError> {
    for &v in t.data() {
        w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_blob<T: Scalar>(r: &mut impl Read, t: &mut Tensor<T>, name: &str) -> Result<(), NnError> {
    let mut bytes = vec![0u8; t.numel() * 4];
    r.read_exact(&mut bytes).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NnError::BadDescriptor { detail: format!("checkpoint truncated in blob '{name}'") }
        } else {
            NnError::Io(e)
        }
    })?;
    for (dst, src) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
        *dst = T::from_f64(f32::from_le_bytes([src[0], src[1], src[2], src[3]]) as f64);
    }
    Ok(())
}

/// Write `net` and its metadata to `path`.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    net: &mut ResNet<T>,
    meta: &CheckpointMeta,
) -> Result<(), NnError> {
    let mut params = Vec::new();
    net.visit_params_mut(&mut |name, v, _, _| {
        params.push(TensorEntry { name: name.to_string(), shape: v.shape().to_vec() });
    });
    let mut stats = Vec::new();
    net.visit_stats_mut(&mut |name, v| {
        stats.push(TensorEntry { name: name.to_string(), shape: v.shape().to_vec() });
    });
    let desc = Descriptor {
        model: net.cfg.clone(),
        bn_initialized: net.bn_initialized(),
        params,
        stats,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&desc)
        .map_err(|e| NnError::BadDescriptor { detail: format!("descriptor serialization: {e}") })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC.as_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut result = Ok(());
    net.visit_params_mut(&mut |_, v, _, _| {
        if result.is_ok() {
            result = write_blob(&mut w, v);
        }
    });
    result?;
    let mut result = Ok(());
    net.visit_stats_mut(&mut |_, v| {
        if result.is_ok() {
            result = write_blob(&mut w, v);
        }
    });
    result?;
    if meta.train_meta.as_ref().is_some_and(|tm| tm.momentum) {
        let mut result = Ok(());
        net.visit_params_mut(&mut |_, _, _, buf| {
            if result.is_ok() {
                result = write_blob(&mut w, buf);
            }
        });
        result?;
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint, rebuilding the network from the stored configuration.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ResNet<T>, CheckpointMeta), NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    let mut len = [0u8; 4];
    if r.read_exact(&mut magic).is_err() || &magic != CHECKPOINT_MAGIC.as_bytes() {
        return Err(NnError::BadMagic { expected: CHECKPOINT_MAGIC });
    }
    r.read_exact(&mut len).map_err(|_| NnError::BadMagic { expected: CHECKPOINT_MAGIC })?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| NnError::BadMagic { expected: CHECKPOINT_MAGIC })?;
    let desc: Descriptor = serde_json::from_slice(&json)
        .map_err(|e| NnError::BadDescriptor { detail: format!("descriptor JSON: {e}") })?;

    let mut net = ResNet::<T>::new(desc.model.clone(), 0)?;
    let mut expect_params = Vec::new();
    net.visit_params_mut(&mut |name, v, _, _| {
        expect_params.push(TensorEntry { name: name.to_string(), shape: v.shape().to_vec() });
    });
    let mut expect_stats = Vec::new();
    net.visit_stats_mut(&mut |name, v| {
        expect_stats.push(TensorEntry { name: name.to_string(), shape: v.shape().to_vec() });
    });
    check_entries("parameter", &desc.params, &expect_params)?;
    check_entries("running stat", &desc.stats, &expect_stats)?;

    let mut result = Ok(());
    net.visit_params_mut(&mut |name, v, _, _| {
        if result.is_ok() {
            result = read_blob(&mut r, v, name);
        }
    });
    result?;
    let mut result = Ok(());
    net.visit_stats_mut(&mut |name, v| {
        if result.is_ok() {
            result = read_blob(&mut r, v, name);
        }
    });
    result?;
    if desc.meta.train_meta.as_ref().is_some_and(|tm| tm.momentum) {
        let mut result = Ok(());
        net.visit_params_mut(&mut |name, _, _, buf| {
            if result.is_ok() {
                result = read_blob(&mut r, buf, name);
            }
        });
        result?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NnError::BadDescriptor { detail: "trailing bytes after blobs".into() });
    }
    net.set_bn_initialized(desc.bn_initialized);
    Ok((net, desc.meta))
}

fn check_entries(kind: &str, stored: &[TensorEntry], expected: &[TensorEntry]) -> Result<(), NnError> {
    if stored.len() != expected.len() {
        return Err(NnError::ArchMismatch {
            detail: format!("{kind} count {} does not match architecture ({})", stored.len(), expected.len()),
        });
    }
    for (s, e) in stored.iter().zip(expected) {
        if s.name != e.name || s.shape != e.shape {
            return Err(NnError::ArchMismatch {
                detail: format!(
                    "{kind} '{}' {:?} does not match architecture entry '{}' {:?}",
                    s.name, s.shape, e.name, e.shape
                ),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::ConvScratch;
    use crate::nn::model::StemKind;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            stem: StemKind::Cifar,
            stage_blocks: [1, 1, 1, 1],
            stage_widths: [4, 8, 16, 32],
            in_channels: 4,
            n_classes: 5,
        }
    }

    fn warmed_net(seed: u64) -> ResNet<f32> {
        let mut net = ResNet::<f32>::new(tiny_cfg(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<f32> = (0..2 * 4 * 32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![2, 4, 32, 32], data);
        net.forward_train(&x, &mut ConvScratch::new()).unwrap();
        net
    }

    fn collect_bits(net: &mut ResNet<f32>) -> Vec<u32> {
        let mut bits = Vec::new();
        net.visit_params_mut(&mut |_, v, _, _| bits.extend(v.data().iter().map(|x| x.to_bits())));
        net.visit_stats_mut(&mut |_, v| bits.extend(v.data().iter().map(|x| x.to_bits())));
        bits
    }

    #[test]
    fn round_trip_is_bit_exact_and_resave_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cnn1");
        let mut net = warmed_net(5);
        let meta = CheckpointMeta {
            band_stats: Some(BandStats { mean: vec![1.0, 2.0, 3.0, 4.0], std: vec![0.5; 4] }),
            pixel_size: Some([10.0, 10.0]),
            class_names: vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()],
            train_meta: None,
        };
        save_checkpoint(&path, &mut net, &meta).unwrap();

        let (mut loaded, got_meta) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(got_meta, meta);
        assert!(loaded.bn_initialized());
        assert_eq!(collect_bits(&mut net), collect_bits(&mut loaded));

        let path2 = dir.path().join("model2.cnn1");
        save_checkpoint(&path2, &mut loaded, &meta).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn momentum_buffers_survive_when_requested() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.cnn1");
        let mut net = warmed_net(6);
        let mut stamp = 0.25f32;
        net.visit_params_mut(&mut |_, _, _, buf| {
            buf.fill(stamp);
            stamp += 0.25;
        });
        let meta = CheckpointMeta {
            train_meta: Some(TrainMeta { epoch: 7, seed: 42, momentum: true }),
            ..CheckpointMeta::default()
        };
        save_checkpoint(&path, &mut net, &meta).unwrap();
        let (mut loaded, got) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(got.train_meta, meta.train_meta);
        let grab = |n: &mut ResNet<f32>| {
            let mut v = Vec::new();
            n.visit_params_mut(&mut |_, _, _, b| v.extend(b.data().iter().map(|x| x.to_bits())));
            v
        };
        assert_eq!(grab(&mut net), grab(&mut loaded));
    }

    #[test]
    fn uninitialized_stats_round_trip_as_uninitialized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fresh.cnn1");
        let mut net = ResNet::<f32>::new(tiny_cfg(), 3).unwrap();
        save_checkpoint(&path, &mut net, &CheckpointMeta::default()).unwrap();
        let (loaded, _) = load_checkpoint::<f32>(&path).unwrap();
        assert!(!loaded.bn_initialized());
    }

    #[test]
    fn wrong_or_truncated_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cnn1");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(NnError::BadMagic { .. })));
        std::fs::write(&path, b"CN").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(NnError::BadMagic { .. })));
    }

    #[test]
    fn truncated_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.cnn1");
        let mut net = warmed_net(8);
        save_checkpoint(&path, &mut net, &CheckpointMeta::default()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(NnError::BadDescriptor { .. })));
    }

    #[test]
    fn tampered_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tamper.cnn1");
        let mut net = warmed_net(9);
        save_checkpoint(&path, &mut net, &CheckpointMeta::default()).unwrap();

        // Rewrite the descriptor claiming wider stages, keeping the blobs.
        let bytes = std::fs::read(&path).unwrap();
        let json_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        let mut desc: Descriptor = serde_json::from_slice(&bytes[8..8 + json_len]).unwrap();
        desc.model.stage_widths = [8, 16, 32, 64];
        let new_json = serde_json::to_vec(&desc).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(b"CNN1");
        out.extend_from_slice(&(new_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_json);
        out.extend_from_slice(&bytes[8 + json_len..]);
        std::fs::write(&path, &out).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(NnError::ArchMismatch { .. })));
    }
}
