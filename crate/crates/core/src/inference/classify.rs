//! Dice a raster and classify every tile with an eval-mode network.

use super::{ClassMap, InferenceError};
use crate::dataset::{normalize_tile, validate_band_stats};
use crate::nn::checkpoint::CheckpointMeta;
use crate::nn::conv::ConvScratch;
use crate::nn::model::ResNet;
use crate::nn::Tensor;
use crate::raster::{dice, pad_to_multiple, Raster4B, Tile, BANDS, TILE_SIZE};

/// A classification result plus any non-fatal diagnostics (currently only
/// resolution mismatches when not running strict).
#[derive(Debug)]
pub struct ClassifyOutcome {
    pub map: ClassMap,
    pub warnings: Vec<String>,
}

/// Knobs for [`classify_raster`]. Neither the batch size nor the thread
/// count may change the produced map.
#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub batch_size: usize,
    /// Error (instead of warn) when the raster's resolution differs from the
    /// checkpoint's training resolution.
    pub strict_resolution: bool,
    pub threads: usize,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { batch_size: 64, strict_resolution: false, threads: 1 }
    }
}

/// Classifies `indices` (into `tiles`) in `batch_size` chunks, returning one
/// class per index. Tiles are independent, so callers may partition `indices`
/// across threads freely.
fn classify_tiles(
    tiles: &[Tile],
    indices: &[usize],
    net: &ResNet<f32>,
    stats: &crate::nn::checkpoint::BandStats,
    batch_size: usize,
) -> Result<Vec<u8>, InferenceError> {
    let slab = BANDS * TILE_SIZE * TILE_SIZE;
    let mut out = Vec::with_capacity(indices.len());
    let mut scratch = ConvScratch::<f32>::new();
    for chunk in indices.chunks(batch_size) {
        let mut x = Tensor::new(
            vec![chunk.len(), BANDS, TILE_SIZE, TILE_SIZE],
            vec![0.0f32; chunk.len() * slab],
        );
        for (bi, &ti) in chunk.iter().enumerate() {
            normalize_tile(&tiles[ti], stats, &mut x.data_mut()[bi * slab..(bi + 1) * slab])?;
        }
        let logits = net.forward_eval(&x, &mut scratch)?;
        for bi in 0..chunk.len() {
            let row = &logits.data()[bi * 5..(bi + 1) * 5];
            let mut best = 0usize;
            for k in 1..5 {
                if row[k] > row[best] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    Ok(out)
}

fn nodata_pixel_count(tile: &Tile, nodata: Option<u16>) -> usize {
    let Some(nd) = nodata else { return 0 };
    let mut count = 0;
    for row in 0..TILE_SIZE {
        for col in 0..TILE_SIZE {
            if (0..BANDS).any(|b| tile.sample(b, row, col) == nd) {
                count += 1;
            }
        }
    }
    count
}

/// Classifies a whole raster into a tile-resolution [`ClassMap`]: pad to a
/// 32-multiple (edge replication), dice row-major, normalize each tile with
/// the checkpoint's band statistics, run eval-mode batches, and take the
/// arg-max per tile with ties broken toward the lower class id. Tiles with
/// more than 50% nodata pixels become nodata cells. The result is bitwise
/// independent of both `batch_size` and `threads` (tiles are classified
/// independently and each cell is written exactly once).
///
/// When the checkpoint records a training resolution and the raster's pixel
/// size differs, `strict_resolution` decides between a hard error and a
/// warning in the outcome.
pub fn classify_raster(
    raster: &Raster4B,
    net: &ResNet<f32>,
    meta: &CheckpointMeta,
    opts: &ClassifyOptions,
) -> Result<ClassifyOutcome, InferenceError> {
    if opts.batch_size == 0 || opts.threads == 0 {
        return Err(InferenceError::BadArgument {
            detail: format!(
                "batch_size and threads must be >= 1, got {} and {}",
                opts.batch_size, opts.threads
            ),
        });
    }
    let stats = meta.band_stats.as_ref().ok_or(InferenceError::MissingStats)?;
    validate_band_stats(stats)?;
    let mut warnings = Vec::new();
    if let Some([ex, ey]) = meta.pixel_size {
        let (ax, ay) = (raster.geo.pixel_size_x, raster.geo.pixel_size_y);
        let off = |e: f64, a: f64| (e - a).abs() > 1e-9 * e.abs().max(a.abs());
        if off(ex, ax) || off(ey, ay) {
            let err = InferenceError::ResolutionMismatch {
                expected_x: ex,
                expected_y: ey,
                actual_x: ax,
                actual_y: ay,
            };
            if opts.strict_resolution {
                return Err(err);
            }
            warnings.push(format!("{err}; classifying anyway"));
        }
    }
    let padded = pad_to_multiple(raster, TILE_SIZE)?;
    let tiles = dice(&padded);
    let width_tiles = padded.width() / TILE_SIZE;
    let height_tiles = padded.height() / TILE_SIZE;
    debug_assert_eq!(tiles.len(), width_tiles * height_tiles);

    let mut cells = vec![crate::dataset::NODATA_CLASS; tiles.len()];
    let valid: Vec<usize> = (0..tiles.len())
        .filter(|&i| 2 * nodata_pixel_count(&tiles[i], padded.nodata) <= TILE_SIZE * TILE_SIZE)
        .collect();

    let workers = opts.threads.min(valid.len()).max(1);
    if workers == 1 {
        let classes = classify_tiles(&tiles, &valid, net, stats, opts.batch_size)?;
        for (&ti, &c) in valid.iter().zip(&classes) {
            cells[ti] = c;
        }
    } else {
        // Contiguous segments per worker. Per-tile logits are bitwise
        // independent of batch composition, so any partition reproduces the
        // serial result exactly.
        let seg = valid.len().div_ceil(workers);
        let results: Vec<Result<Vec<u8>, InferenceError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = valid
                .chunks(seg)
                .map(|segment| {
                    scope.spawn(|| classify_tiles(&tiles, segment, net, stats, opts.batch_size))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("classify worker panicked")).collect()
        });
        for (segment, result) in valid.chunks(seg).zip(results) {
            for (&ti, &c) in segment.iter().zip(&result?) {
                cells[ti] = c;
            }
        }
    }
    let mut geo = raster.geo;
    geo.pixel_size_x *= TILE_SIZE as f64;
    geo.pixel_size_y *= TILE_SIZE as f64;
    let map = ClassMap::new(width_tiles, height_tiles, cells, geo, None)?;
    Ok(ClassifyOutcome { map, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::checkpoint::BandStats;
    use crate::nn::model::ModelConfig;
    use crate::raster::{Dtype, GeoTransform};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn geo(pixel: f64) -> GeoTransform {
        GeoTransform {
            origin_x: 7000.0,
            origin_y: 9000.0,
            pixel_size_x: pixel,
            pixel_size_y: pixel,
        }
    }

    /// A compact net with batch-norm running stats populated by one training
    /// forward pass over random data.
    fn warmed_net(seed: u64) -> ResNet<f32> {
        let cfg = ModelConfig::preset("compact").unwrap();
        let mut net = ResNet::<f32>::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let data: Vec<f32> = (0..2 * 4 * 32 * 32).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let x = Tensor::new(vec![2, 4, 32, 32], data);
        let mut scratch = ConvScratch::<f32>::new();
        net.forward_train(&x, &mut scratch).unwrap();
        net
    }

    fn opts(batch_size: usize, strict_resolution: bool) -> ClassifyOptions {
        ClassifyOptions { batch_size, strict_resolution, threads: 1 }
    }

    fn meta_with_stats(pixel: Option<[f64; 2]>) -> CheckpointMeta {
        CheckpointMeta {
            band_stats: Some(BandStats {
                mean: vec![100.0, 100.0, 100.0, 100.0],
                std: vec![50.0, 50.0, 50.0, 50.0],
            }),
            pixel_size: pixel,
            ..CheckpointMeta::default()
        }
    }

    fn random_raster(seed: u64, w: usize, h: usize, pixel: f64, nodata: Option<u16>) -> Raster4B {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u16> = (0..w * h * BANDS).map(|_| rng.random_range(10..200u16)).collect();
        Raster4B::new(w, h, Dtype::U8, data, geo(pixel), nodata, "EPSG:26911".into()).unwrap()
    }

    #[test]
    fn map_dimensions_and_geo_follow_the_padded_grid() {
        let net = warmed_net(1);
        let meta = meta_with_stats(Some([0.6, 0.6]));
        let r = random_raster(2, 64, 64, 0.6, None);
        let out = classify_raster(&r, &net, &meta, &opts(16, true)).unwrap();
        assert_eq!((out.map.width_tiles(), out.map.height_tiles()), (2, 2));
        assert_eq!(out.map.geo.pixel_size_x, 0.6 * 32.0);
        assert_eq!(out.map.geo.origin_x, r.geo.origin_x);
        assert!(out.warnings.is_empty());
        assert!(out.map.cells().iter().all(|&c| c < 5));
        // Partial edges are padded, not dropped: 70x70 -> 3x3 map.
        let r = random_raster(3, 70, 70, 0.6, None);
        let out = classify_raster(&r, &net, &meta, &opts(16, true)).unwrap();
        assert_eq!((out.map.width_tiles(), out.map.height_tiles()), (3, 3));
    }

    #[test]
    fn mostly_nodata_tiles_become_nodata_cells() {
        let net = warmed_net(4);
        let meta = meta_with_stats(None);
        // 64x32: left tile all nodata (sentinel 0 in every band), right valid.
        let mut r = random_raster(5, 64, 32, 0.6, Some(0));
        let (w, h) = (64usize, 32usize);
        let mut data = r.data().to_vec();
        for band in 0..BANDS {
            for row in 0..h {
                for col in 0..32 {
                    data[(band * h + row) * w + col] = 0;
                }
            }
        }
        r = Raster4B::new(w, h, Dtype::U8, data, geo(0.6), Some(0), "EPSG:26911".into()).unwrap();
        let out = classify_raster(&r, &net, &meta, &opts(8, true)).unwrap();
        assert_eq!(out.map.cell(0, 0), 255);
        assert!(out.map.cell(1, 0) < 5);
    }

    #[test]
    fn exactly_half_nodata_is_still_classified() {
        let net = warmed_net(6);
        let meta = meta_with_stats(None);
        let build = |nodata_pixels: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut data: Vec<u16> =
                (0..32 * 32 * BANDS).map(|_| rng.random_range(10..200u16)).collect();
            for p in 0..nodata_pixels {
                for band in 0..BANDS {
                    data[band * 32 * 32 + p] = 0;
                }
            }
            Raster4B::new(32, 32, Dtype::U8, data, geo(0.6), Some(0), "x".into()).unwrap()
        };
        let half = classify_raster(&build(512), &net, &meta, &opts(4, true)).unwrap();
        assert!(half.map.cell(0, 0) < 5, "exactly 50% nodata stays classified");
        let over = classify_raster(&build(513), &net, &meta, &opts(4, true)).unwrap();
        assert_eq!(over.map.cell(0, 0), 255, "over 50% nodata becomes nodata");
    }

    #[test]
    fn result_is_bitwise_independent_of_batch_size() {
        let net = warmed_net(8);
        let meta = meta_with_stats(None);
        let r = random_raster(9, 160, 96, 0.6, None);
        let a = classify_raster(&r, &net, &meta, &opts(1, true)).unwrap();
        let b = classify_raster(&r, &net, &meta, &opts(64, true)).unwrap();
        let c = classify_raster(&r, &net, &meta, &opts(7, true)).unwrap();
        assert_eq!(a.map, b.map);
        assert_eq!(a.map, c.map);
        for threads in [2, 3, 8] {
            let t = ClassifyOptions { batch_size: 5, strict_resolution: true, threads };
            let d = classify_raster(&r, &net, &meta, &t).unwrap();
            assert_eq!(a.map, d.map, "threads={threads} changed the map");
        }
    }

    #[test]
    fn resolution_mismatch_warns_or_fails_per_mode() {
        let net = warmed_net(10);
        let meta = meta_with_stats(Some([0.6, 0.6]));
        let r = random_raster(11, 32, 32, 1.0, None);
        assert!(matches!(
            classify_raster(&r, &net, &meta, &opts(4, true)),
            Err(InferenceError::ResolutionMismatch { .. })
        ));
        let out = classify_raster(&r, &net, &meta, &opts(4, false)).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("training resolution"));
    }

    #[test]
    fn missing_stats_and_zero_batch_are_rejected() {
        let net = warmed_net(12);
        let r = random_raster(13, 32, 32, 0.6, None);
        let no_stats = CheckpointMeta::default();
        assert!(matches!(
            classify_raster(&r, &net, &no_stats, &opts(4, true)),
            Err(InferenceError::MissingStats)
        ));
        let meta = meta_with_stats(None);
        assert!(matches!(
            classify_raster(&r, &net, &meta, &opts(0, true)),
            Err(InferenceError::BadArgument { .. })
        ));
    }
}
