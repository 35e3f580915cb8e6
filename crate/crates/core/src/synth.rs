//! Synthetic, linearly separable acceptance data: per-class band-mean
//! signatures with additive Gaussian noise, plus a block-layout raster for
//! end-to-end pipeline checks and a nearest-mean oracle classifier.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    ClassId, CurationConfig, DatasetError, Manifest, Sample, Split, N_CLASSES,
};
use crate::raster::{
    tile_mean_ndvi, Dtype, GeoTransform, Raster4B, RasterError, Tile, BANDS, TILE_SIZE,
};

/// Band-mean signature of a synthetic class, ordered R, G, B, NIR:
/// class k has NIR mean 40 + 30k and R mean 160 − 25k, with G and B fixed
/// at 100. Signatures are linearly separable in band-mean space.
pub fn class_band_means(class: u8) -> [f64; BANDS] {
    let k = class as f64;
    [160.0 - 25.0 * k, 100.0, 100.0, 40.0 + 30.0 * k]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 42, n_train: 2500, n_val: 500, n_test: 500, noise_sigma: 20.0 }
    }
}

fn noisy_sample(mean: f64, sigma: f64, rng: &mut ChaCha8Rng) -> u16 {
    let noise = Normal::new(0.0, sigma).expect("sigma validated by caller").sample(rng);
    (mean + noise + 0.5).floor().clamp(0.0, 255.0) as u16
}

/// One 32×32×4 tile of the given class: per-band signature mean plus
/// N(0, σ²) noise, rounded half-up and clamped to the u8 range.
pub fn synth_tile(class: ClassId, sigma: f64, rng: &mut ChaCha8Rng) -> Tile {
    let means = class_band_means(class.value());
    let mut data = vec![0u16; Tile::SAMPLES];
    for band in 0..BANDS {
        let plane = &mut data[band * TILE_SIZE * TILE_SIZE..(band + 1) * TILE_SIZE * TILE_SIZE];
        for v in plane.iter_mut() {
            *v = noisy_sample(means[band], sigma, rng);
        }
    }
    Tile { data, origin_col: 0, origin_row: 0 }
}

/// Generates the balanced synthetic dataset as an in-memory manifest:
/// classes cycle 0..5 within each split, and one seeded generator drives
/// train, then val, then test, so equal configs are byte-reproducible.
pub fn synth_manifest(cfg: &SynthConfig) -> Result<Manifest, DatasetError> {
    if !(cfg.noise_sigma > 0.0) || !cfg.noise_sigma.is_finite() {
        return Err(DatasetError::BadConfig {
            detail: format!("noise_sigma must be positive and finite, got {}", cfg.noise_sigma),
        });
    }
    if cfg.n_train == 0 {
        return Err(DatasetError::BadConfig {
            detail: "n_train must be >= 1".to_string(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_train + cfg.n_val + cfg.n_test);
    for (split, count) in [
        (Split::Train, cfg.n_train),
        (Split::Val, cfg.n_val),
        (Split::Test, cfg.n_test),
    ] {
        for i in 0..count {
            let label = ClassId::new((i % N_CLASSES) as u8).expect("cycle stays in range");
            let tile = synth_tile(label, cfg.noise_sigma, &mut rng);
            let mean_ndvi = tile_mean_ndvi(&tile, None);
            samples.push(Sample {
                tile,
                label,
                split,
                source_id: "synth".to_string(),
                mean_ndvi,
            });
        }
    }
    Manifest::assemble(samples, CurationConfig::default(), cfg.seed, Dtype::U8, None, 0)
}

/// Independent oracle: per-band tile means, nearest class signature by
/// Euclidean distance. No learned parameters anywhere.
pub fn nearest_mean_class(tile: &Tile) -> ClassId {
    let mut means = [0.0f64; BANDS];
    for (band, m) in means.iter_mut().enumerate() {
        let plane = &tile.data[band * TILE_SIZE * TILE_SIZE..(band + 1) * TILE_SIZE * TILE_SIZE];
        *m = plane.iter().map(|&v| v as f64).sum::<f64>() / (TILE_SIZE * TILE_SIZE) as f64;
    }
    let mut best = 0u8;
    let mut best_d = f64::INFINITY;
    for class in 0..N_CLASSES as u8 {
        let sig = class_band_means(class);
        let d: f64 = (0..BANDS).map(|b| (means[b] - sig[b]).powi(2)).sum();
        if d < best_d {
            best_d = d;
            best = class;
        }
    }
    ClassId::new(best).expect("class loop stays in range")
}

/// Fraction of a split the nearest-mean oracle labels correctly.
pub fn nearest_mean_accuracy(manifest: &Manifest, split: Split) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for s in manifest.samples.iter().filter(|s| s.split == split) {
        total += 1;
        if nearest_mean_class(&s.tile) == s.label {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// A raster tiled from 32×32 class-signature blocks: block (bx, by) is
/// drawn from `layout[by·blocks_w + bx]`'s signature with the same noise
/// model as [`synth_tile`]. Returned dimensions are
/// `32·blocks_w × 32·blocks_h`.
pub fn synth_block_raster(
    layout: &[u8],
    blocks_w: usize,
    blocks_h: usize,
    sigma: f64,
    seed: u64,
) -> Result<Raster4B, RasterError> {
    if layout.len() != blocks_w * blocks_h {
        return Err(RasterError::InvalidArgument {
            detail: format!(
                "layout has {} entries for a {blocks_w}x{blocks_h} block grid",
                layout.len()
            ),
        });
    }
    if layout.iter().any(|&c| c as usize >= N_CLASSES) {
        return Err(RasterError::InvalidArgument {
            detail: "layout entries must be class ids 0..=4".to_string(),
        });
    }
    let (w, h) = (blocks_w * TILE_SIZE, blocks_h * TILE_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0u16; w * h * BANDS];
    // Draw per block (row-major blocks, bands within a block) so any layout
    // edit perturbs only its own block. Band order R, G, B, NIR matches the
    // raster container layout.
    for by in 0..blocks_h {
        for bx in 0..blocks_w {
            let means = class_band_means(layout[by * blocks_w + bx]);
            for band in 0..BANDS {
                for r in 0..TILE_SIZE {
                    let row = by * TILE_SIZE + r;
                    let base = (band * h + row) * w + bx * TILE_SIZE;
                    for v in data[base..base + TILE_SIZE].iter_mut() {
                        *v = noisy_sample(means[band], sigma, &mut rng);
                    }
                }
            }
        }
    }
    Raster4B::new(
        w,
        h,
        Dtype::U8,
        data,
        GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size_x: 0.6,
            pixel_size_y: 0.6,
        },
        None,
        "EPSG:26911".to_string(),
    )
}

/// The fixed 10×10 layout used by the end-to-end acceptance run: vertical
/// stripes two blocks wide, one class per stripe — exactly 20 blocks per
/// class. Every cell's 3×3 neighborhood is dominated by its own stripe, so
/// the layout is a majority-filter fixed point: filtering can only correct
/// stray misclassifications, never alter an already-correct map.
pub fn acceptance_layout() -> Vec<u8> {
    (0..100).map(|i| ((i % 10) / 2) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BAND_R as R;

    #[test]
    fn signatures_follow_the_band_mean_formulas() {
        assert_eq!(class_band_means(0), [160.0, 100.0, 100.0, 40.0]);
        assert_eq!(class_band_means(2), [110.0, 100.0, 100.0, 100.0]);
        assert_eq!(class_band_means(4), [60.0, 100.0, 100.0, 160.0]);
    }

    #[test]
    fn tiles_concentrate_around_their_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for class in 0..5u8 {
            let tile = synth_tile(ClassId::new(class).unwrap(), 20.0, &mut rng);
            let sig = class_band_means(class);
            for band in 0..BANDS {
                let plane = &tile.data[band * 1024..(band + 1) * 1024];
                let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / 1024.0;
                // Standard error is 20/32 ≈ 0.63; allow 5σ plus clipping bias.
                assert!(
                    (mean - sig[band]).abs() < 4.0,
                    "class {class} band {band}: mean {mean} vs {}",
                    sig[band]
                );
            }
        }
    }

    #[test]
    fn manifest_is_balanced_split_tagged_and_reproducible() {
        let cfg = SynthConfig { n_train: 250, n_val: 50, n_test: 50, ..SynthConfig::default() };
        let m = synth_manifest(&cfg).unwrap();
        assert_eq!(m.meta.total, 350);
        assert_eq!(m.meta.class_counts, [70; 5]);
        assert_eq!(m.count_in(Split::Train), 250);
        assert_eq!(m.count_in(Split::Val), 50);
        assert_eq!(m.count_in(Split::Test), 50);
        m.meta.validate().unwrap();
        let again = synth_manifest(&cfg).unwrap();
        assert_eq!(again.samples[17].tile.data, m.samples[17].tile.data);
        assert_eq!(again.meta.band_stats, m.meta.band_stats);
        let other = synth_manifest(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(other.samples[17].tile.data, m.samples[17].tile.data);
    }

    #[test]
    fn nearest_mean_oracle_is_nearly_perfect_on_synthetic_data() {
        let cfg = SynthConfig { n_train: 500, n_val: 100, n_test: 100, ..SynthConfig::default() };
        let m = synth_manifest(&cfg).unwrap();
        for split in [Split::Train, Split::Val, Split::Test] {
            let acc = nearest_mean_accuracy(&m, split);
            assert!(acc >= 0.95, "{split:?} oracle accuracy {acc}");
        }
    }

    #[test]
    fn block_raster_encodes_its_layout() {
        let layout = acceptance_layout();
        assert_eq!(layout.len(), 100);
        let mut per_class = [0usize; 5];
        for &c in &layout {
            per_class[c as usize] += 1;
        }
        assert_eq!(per_class, [20; 5]);

        let r = synth_block_raster(&layout, 10, 10, 20.0, 7).unwrap();
        assert_eq!((r.width(), r.height()), (320, 320));
        // Block (3, 2): class layout[23]; check the R-band block mean.
        let class = layout[23];
        let sig = class_band_means(class);
        let mut sum = 0.0;
        for r0 in 0..32 {
            for c0 in 0..32 {
                sum += r.sample(R, 2 * 32 + r0, 3 * 32 + c0) as f64;
            }
        }
        assert!((sum / 1024.0 - sig[0]).abs() < 4.0);
        // Same seed, same bytes; layouts must match the grid.
        let again = synth_block_raster(&layout, 10, 10, 20.0, 7).unwrap();
        assert_eq!(again.data(), r.data());
        assert!(synth_block_raster(&layout, 9, 10, 20.0, 7).is_err());
        assert!(synth_block_raster(&[5u8; 4], 2, 2, 20.0, 7).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bad = SynthConfig { noise_sigma: 0.0, ..SynthConfig::default() };
        assert!(matches!(synth_manifest(&bad), Err(DatasetError::BadConfig { .. })));
        let bad = SynthConfig { n_train: 0, ..SynthConfig::default() };
        assert!(matches!(synth_manifest(&bad), Err(DatasetError::BadConfig { .. })));
    }
}
