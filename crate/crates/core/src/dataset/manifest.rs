//! The manifest: samples with split tags, band statistics, and the on-disk
//! JSON-Lines + raw-tile-payload layout.
//!
//! `manifest.jsonl` line 1 is the metadata record (counts, band stats,
//! curation config, seed); each following line describes one sample
//! `{tile_file, offset, label, split, source_id, mean_ndvi}`. Tile payloads
//! live in `tiles.bin` as raw 32×32×4 blocks in manifest order, encoded with
//! the source raster's dtype. All writes are byte-deterministic.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment_tile, normalize_tile};
use super::curate::CurationConfig;
use super::{ClassId, DatasetError, N_CLASSES};
use crate::nn::checkpoint::BandStats;
use crate::nn::train::SampleSource;
use crate::raster::{Dtype, Tile, BANDS, TILE_SIZE};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TILES_FILE: &str = "tiles.bin";

/// Which partition a sample belongs to. Freshly curated manifests are all
/// train until [`super::split`] carves out validation and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A curated, labeled 32×32×4 tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tile: Tile,
    pub label: ClassId,
    pub split: Split,
    pub source_id: String,
    pub mean_ndvi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

/// The manifest metadata record (line 1 of `manifest.jsonl`). Serialization
/// is byte-deterministic: field order is fixed by this declaration and
/// numbers round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMeta {
    pub total: u64,
    pub class_counts: [u64; N_CLASSES],
    pub split_counts: SplitCounts,
    pub band_stats: BandStats,
    pub curation_config: CurationConfig,
    pub seed: u64,
    pub dtype: Dtype,
    pub nodata: Option<u16>,
    pub overlap_conflicts: u64,
}

impl ManifestMeta {
    /// Structural validation: counts must be internally consistent and the
    /// band statistics usable for normalization.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let class_sum: u64 = self.class_counts.iter().sum();
        if class_sum != self.total {
            return Err(DatasetError::BadManifest {
                detail: format!(
                    "class counts sum to {class_sum} but total is {}",
                    self.total
                ),
            });
        }
        let split_sum = self.split_counts.train + self.split_counts.val + self.split_counts.test;
        if split_sum != self.total {
            return Err(DatasetError::BadManifest {
                detail: format!("split counts sum to {split_sum} but total is {}", self.total),
            });
        }
        validate_band_stats(&self.band_stats)?;
        self.curation_config.validate()?;
        Ok(())
    }
}

pub(crate) fn validate_band_stats(stats: &BandStats) -> Result<(), DatasetError> {
    if stats.mean.len() != BANDS || stats.std.len() != BANDS {
        return Err(DatasetError::DegenerateStats {
            detail: format!(
                "expected {BANDS} means and stds, got {} and {}",
                stats.mean.len(),
                stats.std.len()
            ),
        });
    }
    for (b, (&m, &s)) in stats.mean.iter().zip(&stats.std).enumerate() {
        if !m.is_finite() || !s.is_finite() || s <= 0.0 {
            return Err(DatasetError::DegenerateStats {
                detail: format!("band {b} has mean {m}, std {s}"),
            });
        }
    }
    Ok(())
}

/// Per-band mean and population standard deviation over every pixel of the
/// given samples' tiles.
pub fn compute_band_stats<'a>(
    samples: impl Iterator<Item = &'a Sample>,
) -> Result<BandStats, DatasetError> {
    let mut sum = [0.0f64; BANDS];
    let mut sumsq = [0.0f64; BANDS];
    let mut n = 0u64;
    for s in samples {
        n += 1;
        for band in 0..BANDS {
            let plane =
                &s.tile.data[band * TILE_SIZE * TILE_SIZE..(band + 1) * TILE_SIZE * TILE_SIZE];
            for &v in plane {
                let v = v as f64;
                sum[band] += v;
                sumsq[band] += v * v;
            }
        }
    }
    if n == 0 {
        return Err(DatasetError::DegenerateStats {
            detail: "no samples to compute band statistics from".to_string(),
        });
    }
    let count = (n as f64) * (TILE_SIZE * TILE_SIZE) as f64;
    let mut mean = Vec::with_capacity(BANDS);
    let mut std = Vec::with_capacity(BANDS);
    for band in 0..BANDS {
        let m = sum[band] / count;
        let var = (sumsq[band] / count - m * m).max(0.0);
        mean.push(m);
        std.push(var.sqrt());
    }
    let stats = BandStats { mean, std };
    validate_band_stats(&stats)?;
    Ok(stats)
}

/// An in-memory manifest: metadata plus samples with their tile payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub meta: ManifestMeta,
    pub samples: Vec<Sample>,
}

impl Manifest {
    /// Builds a manifest around `samples`, computing counts and band
    /// statistics (over the train split only).
    pub fn assemble(
        samples: Vec<Sample>,
        curation_config: CurationConfig,
        seed: u64,
        dtype: Dtype,
        nodata: Option<u16>,
        overlap_conflicts: u64,
    ) -> Result<Manifest, DatasetError> {
        let band_stats = compute_band_stats(samples.iter().filter(|s| s.split == Split::Train))?;
        let mut meta = ManifestMeta {
            total: 0,
            class_counts: [0; N_CLASSES],
            split_counts: SplitCounts { train: 0, val: 0, test: 0 },
            band_stats,
            curation_config,
            seed,
            dtype,
            nodata,
            overlap_conflicts,
        };
        fill_counts(&mut meta, &samples);
        Ok(Manifest { meta, samples })
    }

    /// Recomputes counts and train-split band statistics after a re-tagging.
    pub(crate) fn refresh(&mut self) -> Result<(), DatasetError> {
        self.meta.band_stats =
            compute_band_stats(self.samples.iter().filter(|s| s.split == Split::Train))?;
        fill_counts(&mut self.meta, &self.samples);
        Ok(())
    }

    pub fn count_in(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    /// A borrowed, normalized view over one split, usable as a training or
    /// evaluation [`SampleSource`]. With `augment` set, samples are
    /// flip/rotate/crop-augmented when the caller supplies an RNG stream.
    pub fn view(&self, split: Split, augment: bool) -> Result<ManifestView<'_>, DatasetError> {
        validate_band_stats(&self.meta.band_stats)?;
        Ok(ManifestView {
            samples: self.samples.iter().filter(|s| s.split == split).collect(),
            stats: &self.meta.band_stats,
            augment,
        })
    }
}

fn fill_counts(meta: &mut ManifestMeta, samples: &[Sample]) {
    meta.total = samples.len() as u64;
    meta.class_counts = [0; N_CLASSES];
    meta.split_counts = SplitCounts { train: 0, val: 0, test: 0 };
    for s in samples {
        meta.class_counts[s.label.index()] += 1;
        match s.split {
            Split::Train => meta.split_counts.train += 1,
            Split::Val => meta.split_counts.val += 1,
            Split::Test => meta.split_counts.test += 1,
        }
    }
}

/// One sample line of `manifest.jsonl`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    tile_file: String,
    offset: u64,
    label: u8,
    split: Split,
    source_id: String,
    mean_ndvi: f64,
}

fn tile_block_bytes(dtype: Dtype) -> usize {
    Tile::SAMPLES * dtype.bytes_per_sample()
}

/// Writes `manifest.jsonl` and `tiles.bin` into `dir`. Fails if the metadata
/// disagrees with the actual samples (internal-consistency guard) or a tile
/// value exceeds the declared dtype.
pub fn write_manifest(manifest: &Manifest, dir: &Path) -> Result<(), DatasetError> {
    let mut check = manifest.meta.clone();
    fill_counts(&mut check, &manifest.samples);
    if check != manifest.meta {
        return Err(DatasetError::BadManifest {
            detail: "metadata counts disagree with the sample list".to_string(),
        });
    }
    manifest.meta.validate()?;
    let dtype = manifest.meta.dtype;
    let block = tile_block_bytes(dtype);
    let mut jsonl = serde_json::to_string(&manifest.meta).map_err(io_invalid)?;
    jsonl.push('\n');
    let mut payload = Vec::with_capacity(manifest.samples.len() * block);
    for (i, s) in manifest.samples.iter().enumerate() {
        let record = SampleRecord {
            tile_file: TILES_FILE.to_string(),
            offset: (i * block) as u64,
            label: s.label.value(),
            split: s.split,
            source_id: s.source_id.clone(),
            mean_ndvi: s.mean_ndvi,
        };
        jsonl.push_str(&serde_json::to_string(&record).map_err(io_invalid)?);
        jsonl.push('\n');
        match dtype {
            Dtype::U8 => {
                for &v in &s.tile.data {
                    if v > u8::MAX as u16 {
                        return Err(DatasetError::BadManifest {
                            detail: format!("sample {i} holds value {v} outside u8 dtype"),
                        });
                    }
                    payload.push(v as u8);
                }
            }
            Dtype::U16le => {
                for &v in &s.tile.data {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    fs::write(dir.join(MANIFEST_FILE), jsonl)?;
    fs::write(dir.join(TILES_FILE), payload)?;
    Ok(())
}

fn io_invalid(e: serde_json::Error) -> DatasetError {
    DatasetError::BadManifest {
        detail: format!("serialization failed: {e}"),
    }
}

/// Reads a manifest directory back. Tile origins are not part of the on-disk
/// schema (they matter only during curation) and come back as zero.
pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut lines = text.lines();
    let meta_line = lines.next().ok_or_else(|| DatasetError::BadManifest {
        detail: "manifest is empty".to_string(),
    })?;
    let meta: ManifestMeta =
        serde_json::from_str(meta_line).map_err(|e| DatasetError::BadManifest {
            detail: format!("metadata record: {e}"),
        })?;
    meta.validate()?;
    let block = tile_block_bytes(meta.dtype);
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let rec: SampleRecord =
            serde_json::from_str(line).map_err(|e| DatasetError::BadManifest {
                detail: format!("sample record {i}: {e}"),
            })?;
        if rec.tile_file != TILES_FILE {
            return Err(DatasetError::BadManifest {
                detail: format!(
                    "sample record {i} references {:?}; expected {TILES_FILE:?}",
                    rec.tile_file
                ),
            });
        }
        if rec.offset != (i * block) as u64 {
            return Err(DatasetError::BadManifest {
                detail: format!(
                    "sample record {i} has offset {}, expected {}",
                    rec.offset,
                    i * block
                ),
            });
        }
        records.push(rec);
    }
    if records.len() as u64 != meta.total {
        return Err(DatasetError::BadManifest {
            detail: format!(
                "metadata declares {} samples but {} records follow",
                meta.total,
                records.len()
            ),
        });
    }
    let payload = fs::read(dir.join(TILES_FILE))?;
    if payload.len() != records.len() * block {
        return Err(DatasetError::BadManifest {
            detail: format!(
                "{TILES_FILE} holds {} bytes, expected {} ({} blocks of {block})",
                payload.len(),
                records.len() * block,
                records.len()
            ),
        });
    }
    let mut samples = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let chunk = &payload[i * block..(i + 1) * block];
        let data: Vec<u16> = match meta.dtype {
            Dtype::U8 => chunk.iter().map(|&b| b as u16).collect(),
            Dtype::U16le => chunk
                .chunks_exact(2)
                .map(|p| u16::from_le_bytes([p[0], p[1]]))
                .collect(),
        };
        samples.push(Sample {
            tile: Tile { data, origin_col: 0, origin_row: 0 },
            label: ClassId::new(rec.label).map_err(|_| DatasetError::BadManifest {
                detail: format!("sample record {i} has label {}", rec.label),
            })?,
            split: rec.split,
            source_id: rec.source_id,
            mean_ndvi: rec.mean_ndvi,
        });
    }
    let manifest = Manifest { meta, samples };
    let mut check = manifest.meta.clone();
    fill_counts(&mut check, &manifest.samples);
    if check != manifest.meta {
        return Err(DatasetError::BadManifest {
            detail: "metadata counts disagree with the sample records".to_string(),
        });
    }
    Ok(manifest)
}

/// Borrowed per-split view implementing [`SampleSource`]: tiles come out
/// normalized with the manifest's band statistics, augmented first when both
/// the view allows it and the caller supplies an RNG.
pub struct ManifestView<'a> {
    samples: Vec<&'a Sample>,
    stats: &'a BandStats,
    augment: bool,
}

impl SampleSource for ManifestView<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_shape(&self) -> (usize, usize, usize) {
        (BANDS, TILE_SIZE, TILE_SIZE)
    }

    fn label(&self, idx: usize) -> u8 {
        self.samples[idx].label.value()
    }

    fn fill(&self, idx: usize, rng: Option<&mut ChaCha8Rng>, out: &mut [f32]) {
        let sample = self.samples[idx];
        match rng {
            Some(rng) if self.augment => {
                let tile = augment_tile(&sample.tile, rng);
                normalize_tile(&tile, self.stats, out).expect("stats validated at view creation");
            }
            _ => normalize_tile(&sample.tile, self.stats, out)
                .expect("stats validated at view creation"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn config() -> CurationConfig {
        CurationConfig::default()
    }

    pub(crate) fn synthetic_samples(n: usize, seed: u64, max: u16) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let data: Vec<u16> =
                    (0..Tile::SAMPLES).map(|_| rng.random_range(0..=max)).collect();
                Sample {
                    tile: Tile { data, origin_col: 0, origin_row: 0 },
                    label: ClassId::new((i % N_CLASSES) as u8).unwrap(),
                    split: Split::Train,
                    source_id: format!("r{}", i % 3),
                    mean_ndvi: (i as f64) / (n as f64),
                }
            })
            .collect()
    }

    #[test]
    fn assemble_counts_classes_and_splits() {
        let mut samples = synthetic_samples(10, 1, 255);
        samples[3].split = Split::Val;
        samples[7].split = Split::Test;
        let m = Manifest::assemble(samples, config(), 42, Dtype::U8, None, 0).unwrap();
        assert_eq!(m.meta.total, 10);
        assert_eq!(m.meta.class_counts, [2, 2, 2, 2, 2]);
        assert_eq!(m.meta.split_counts, SplitCounts { train: 8, val: 1, test: 1 });
        m.meta.validate().unwrap();
    }

    #[test]
    fn band_stats_come_from_train_split_only() {
        let mut samples = synthetic_samples(6, 2, 255);
        // Make the val sample wildly different; stats must not move.
        samples[5].split = Split::Val;
        for v in samples[5].tile.data.iter_mut() {
            *v = 60_000.min(255);
        }
        let with_val = Manifest::assemble(samples.clone(), config(), 0, Dtype::U8, None, 0).unwrap();
        samples.truncate(5);
        let train_only = Manifest::assemble(samples, config(), 0, Dtype::U8, None, 0).unwrap();
        assert_eq!(with_val.meta.band_stats, train_only.meta.band_stats);
    }

    #[test]
    fn constant_band_yields_degenerate_stats() {
        let mut samples = synthetic_samples(3, 3, 255);
        for s in &mut samples {
            for v in &mut s.tile.data[0..TILE_SIZE * TILE_SIZE] {
                *v = 17;
            }
        }
        assert!(matches!(
            Manifest::assemble(samples, config(), 0, Dtype::U8, None, 0),
            Err(DatasetError::DegenerateStats { .. })
        ));
    }

    #[test]
    fn round_trip_preserves_samples_and_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut samples = synthetic_samples(8, 4, u16::MAX);
        samples[2].split = Split::Val;
        samples[6].split = Split::Test;
        let m = Manifest::assemble(samples, config(), 7, Dtype::U16le, Some(0), 3).unwrap();
        write_manifest(&m, dir.path()).unwrap();
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(back.meta, m.meta);
        assert_eq!(back.samples.len(), m.samples.len());
        for (a, b) in back.samples.iter().zip(&m.samples) {
            assert_eq!(a.tile.data, b.tile.data);
            assert_eq!(a.label, b.label);
            assert_eq!(a.split, b.split);
            assert_eq!(a.source_id, b.source_id);
            assert_eq!(a.mean_ndvi, b.mean_ndvi);
        }
        // Re-writing the read manifest reproduces both files byte for byte.
        let dir2 = tempfile::tempdir().unwrap();
        write_manifest(&back, dir2.path()).unwrap();
        for f in [MANIFEST_FILE, TILES_FILE] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn tiles_bin_layout_is_raw_blocks_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synthetic_samples(5, 5, 255);
        let expected_first = samples[0].tile.data.clone();
        let m = Manifest::assemble(samples, config(), 0, Dtype::U8, None, 0).unwrap();
        write_manifest(&m, dir.path()).unwrap();
        let payload = fs::read(dir.path().join(TILES_FILE)).unwrap();
        assert_eq!(payload.len(), 5 * Tile::SAMPLES);
        let first: Vec<u16> = payload[..Tile::SAMPLES].iter().map(|&b| b as u16).collect();
        assert_eq!(first, expected_first);
    }

    #[test]
    fn truncated_payload_and_tampered_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::assemble(synthetic_samples(4, 6, 255), config(), 0, Dtype::U8, None, 0)
            .unwrap();
        write_manifest(&m, dir.path()).unwrap();
        let tiles = dir.path().join(TILES_FILE);
        let mut payload = fs::read(&tiles).unwrap();
        payload.pop();
        fs::write(&tiles, &payload).unwrap();
        assert!(matches!(
            read_manifest(dir.path()),
            Err(DatasetError::BadManifest { .. })
        ));

        write_manifest(&m, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap();
        let tampered = text.replacen("\"total\":4", "\"total\":5", 1);
        assert_ne!(text, tampered);
        fs::write(&mpath, tampered).unwrap();
        assert!(matches!(
            read_manifest(dir.path()),
            Err(DatasetError::BadManifest { .. })
        ));
    }

    #[test]
    fn view_normalizes_with_train_statistics() {
        let m = Manifest::assemble(synthetic_samples(6, 8, 255), config(), 0, Dtype::U8, None, 0)
            .unwrap();
        let view = m.view(Split::Train, false).unwrap();
        assert_eq!(view.len(), 6);
        assert_eq!(view.sample_shape(), (4, TILE_SIZE, TILE_SIZE));
        let mut out = vec![0.0f32; Tile::SAMPLES];
        view.fill(0, None, &mut out);
        let expect = (m.samples[0].tile.data[0] as f64 - m.meta.band_stats.mean[0])
            / m.meta.band_stats.std[0];
        assert_eq!(out[0], expect as f32);
        assert_eq!(view.label(0), 0);
        // Empty split views are allowed; training rejects them later.
        assert_eq!(m.view(Split::Val, false).unwrap().len(), 0);
    }
}
