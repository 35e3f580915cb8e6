//! Training-time tile augmentation (flips, right-angle rotation,
//! reflect-pad random crop) and band normalization.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::manifest::validate_band_stats;
use super::DatasetError;
use crate::nn::checkpoint::BandStats;
use crate::raster::{Tile, BANDS, TILE_SIZE};

/// Reflect padding width on each side before the random crop.
pub const CROP_PAD: usize = 4;

fn map_tile(tile: &Tile, f: impl Fn(usize, usize) -> (usize, usize)) -> Tile {
    let s = TILE_SIZE;
    let mut data = vec![0u16; Tile::SAMPLES];
    for band in 0..BANDS {
        for row in 0..s {
            for col in 0..s {
                let (sr, sc) = f(row, col);
                data[(band * s + row) * s + col] = tile.sample(band, sr, sc);
            }
        }
    }
    Tile {
        data,
        origin_col: tile.origin_col,
        origin_row: tile.origin_row,
    }
}

pub(crate) fn hflip_tile(tile: &Tile) -> Tile {
    map_tile(tile, |r, c| (r, TILE_SIZE - 1 - c))
}

pub(crate) fn vflip_tile(tile: &Tile) -> Tile {
    map_tile(tile, |r, c| (TILE_SIZE - 1 - r, c))
}

/// One 90° counter-clockwise rotation: output (r, c) reads input (c, S−1−r).
pub fn rot90_tile(tile: &Tile) -> Tile {
    map_tile(tile, |r, c| (c, TILE_SIZE - 1 - r))
}

/// Mirror index `i` back into [0, n) without repeating the edge sample
/// (valid for offsets up to n−1, far beyond the padding used here).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if (i as usize) >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// Reflect-pads the tile by [`CROP_PAD`] on every side and crops the 32×32
/// window whose top-left corner sits at (col `dx`, row `dy`) of the padded
/// grid, `dx, dy ∈ 0..=2·CROP_PAD`. The centered window (4, 4) is the
/// identity.
pub fn reflect_crop(tile: &Tile, dx: usize, dy: usize) -> Tile {
    assert!(dx <= 2 * CROP_PAD && dy <= 2 * CROP_PAD, "crop window out of the padded grid");
    map_tile(tile, |r, c| {
        (
            reflect(r as isize + dy as isize - CROP_PAD as isize, TILE_SIZE),
            reflect(c as isize + dx as isize - CROP_PAD as isize, TILE_SIZE),
        )
    })
}

/// Random training augmentation. Draw order from `rng` is fixed: horizontal
/// flip (p = 0.5), vertical flip (p = 0.5), rotation count k ∈ {0,1,2,3},
/// crop dx ∈ 0..=8, crop dy ∈ 0..=8 — so a given stream position always
/// produces the same transform. All bands move identically; the label is
/// untouched by construction.
pub fn augment_tile(tile: &Tile, rng: &mut ChaCha8Rng) -> Tile {
    let hflip = rng.random_bool(0.5);
    let vflip = rng.random_bool(0.5);
    let k = rng.random_range(0..4u8);
    let dx = rng.random_range(0..=2 * CROP_PAD);
    let dy = rng.random_range(0..=2 * CROP_PAD);
    let mut out = tile.clone();
    if hflip {
        out = hflip_tile(&out);
    }
    if vflip {
        out = vflip_tile(&out);
    }
    for _ in 0..k {
        out = rot90_tile(&out);
    }
    reflect_crop(&out, dx, dy)
}

/// Normalizes a tile into `out` (channel-major, length 4·32·32):
/// `out[c] = (tile[c] − mean[c]) / std[c]`, computed in f64 and stored as
/// f32.
pub fn normalize_tile(tile: &Tile, stats: &BandStats, out: &mut [f32]) -> Result<(), DatasetError> {
    validate_band_stats(stats)?;
    if out.len() != Tile::SAMPLES {
        return Err(DatasetError::BadConfig {
            detail: format!("output slab has {} values, expected {}", out.len(), Tile::SAMPLES),
        });
    }
    let plane = TILE_SIZE * TILE_SIZE;
    for band in 0..BANDS {
        let (mean, std) = (stats.mean[band], stats.std[band]);
        for i in 0..plane {
            let v = tile.data[band * plane + i] as f64;
            out[band * plane + i] = ((v - mean) / std) as f32;
        }
    }
    Ok(())
}
