//! Pure raster operations: bilinear resampling, NDVI, dicing into 32×32
//! tiles, and edge-replicating padding.

use super::{GeoTransform, Raster4B, RasterError, Tile, BANDS, BAND_NIR, BAND_R, TILE_SIZE};

/// The four bilinear neighbors of a fractional source position along one
/// axis: clamped low/high indices plus the high-side weight.
#[inline]
fn axis_neighbors(pos: f64, dim: usize) -> (usize, usize, f64) {
    let floor = pos.floor();
    let frac = pos - floor;
    let lo = (floor as isize).clamp(0, dim as isize - 1) as usize;
    let hi = (floor as isize + 1).clamp(0, dim as isize - 1) as usize;
    (lo, hi, frac)
}

/// Resamples all four bands to a square `target_pixel_size` grid covering the
/// same extent (`out_dim = ceil(in_dim · in_size / target)`), interpolating
/// bilinearly between source pixel centers. Values are rounded half-up and
/// clamped to the dtype range, which is preserved. A pixel whose
/// interpolation stencil touches any nodata pixel with nonzero weight becomes
/// nodata; with `target` equal to both source pixel sizes the operation is
/// the identity.
pub fn resample(raster: &Raster4B, target_pixel_size: f64) -> Result<Raster4B, RasterError> {
    if !(target_pixel_size > 0.0) || !target_pixel_size.is_finite() {
        return Err(RasterError::InvalidArgument {
            detail: format!("target pixel size must be positive, got {target_pixel_size}"),
        });
    }
    let (w, h) = (raster.width(), raster.height());
    let sx = raster.geo.pixel_size_x / target_pixel_size;
    let sy = raster.geo.pixel_size_y / target_pixel_size;
    let out_w = (w as f64 * sx).ceil() as usize;
    let out_h = (h as f64 * sy).ceil() as usize;
    let max = raster.dtype().max_value() as f64;
    let mut data = vec![0u16; out_w * out_h * BANDS];
    for or in 0..out_h {
        // Source pixel-center coordinates of this output pixel's center.
        let src_r = (or as f64 + 0.5) / sy - 0.5;
        let (r0, r1, fy) = axis_neighbors(src_r, h);
        for oc in 0..out_w {
            let src_c = (oc as f64 + 0.5) / sx - 0.5;
            let (c0, c1, fx) = axis_neighbors(src_c, w);
            let stencil = [
                (r0, c0, (1.0 - fy) * (1.0 - fx)),
                (r0, c1, (1.0 - fy) * fx),
                (r1, c0, fy * (1.0 - fx)),
                (r1, c1, fy * fx),
            ];
            let touches_nodata = raster.nodata.is_some()
                && stencil
                    .iter()
                    .any(|&(r, c, wt)| wt > 0.0 && raster.is_nodata(r, c));
            for band in 0..BANDS {
                let out = &mut data[(band * out_h + or) * out_w + oc];
                if touches_nodata {
                    *out = raster.nodata.unwrap();
                } else {
                    let v: f64 = stencil
                        .iter()
                        .map(|&(r, c, wt)| wt * raster.sample(band, r, c) as f64)
                        .sum();
                    *out = (v + 0.5).floor().clamp(0.0, max) as u16;
                }
            }
        }
    }
    Raster4B::new(
        out_w,
        out_h,
        raster.dtype(),
        data,
        GeoTransform {
            origin_x: raster.geo.origin_x,
            origin_y: raster.geo.origin_y,
            pixel_size_x: target_pixel_size,
            pixel_size_y: target_pixel_size,
        },
        raster.nodata,
        raster.crs.clone(),
    )
}

#[inline]
fn ndvi_value(red: u16, nir: u16) -> f64 {
    let (r, n) = (red as f64, nir as f64);
    let denom = n + r;
    // Zero-denominator pixels are dark/nodata-like; define them as 0 so they
    // cannot poison tile means.
    if denom == 0.0 {
        0.0
    } else {
        (n - r) / denom
    }
}

/// Per-pixel NDVI = (NIR − R) / (NIR + R), row-major. Nodata pixels are
/// flagged as NaN so downstream means can exclude them.
pub fn ndvi_raster(raster: &Raster4B) -> Vec<f64> {
    let (w, h) = (raster.width(), raster.height());
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            out.push(if raster.is_nodata(row, col) {
                f64::NAN
            } else {
                ndvi_value(raster.sample(BAND_R, row, col), raster.sample(BAND_NIR, row, col))
            });
        }
    }
    out
}

/// Per-pixel NDVI of a tile, row-major; pixels where any band equals the
/// nodata sentinel become NaN.
pub fn ndvi_tile(tile: &Tile, nodata: Option<u16>) -> Vec<f64> {
    let mut out = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
    for row in 0..TILE_SIZE {
        for col in 0..TILE_SIZE {
            let is_nodata = match nodata {
                None => false,
                Some(nd) => (0..BANDS).any(|b| tile.sample(b, row, col) == nd),
            };
            out.push(if is_nodata {
                f64::NAN
            } else {
                ndvi_value(tile.sample(BAND_R, row, col), tile.sample(BAND_NIR, row, col))
            });
        }
    }
    out
}

/// Mean NDVI over a tile's valid (non-nodata) pixels; a tile with no valid
/// pixels has mean 0 by the same dark-pixel convention as the zero
/// denominator.
pub fn tile_mean_ndvi(tile: &Tile, nodata: Option<u16>) -> f64 {
    let values = ndvi_tile(tile, nodata);
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        if !v.is_nan() {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Cuts the top-left ⌊w/32⌋×⌊h/32⌋ grid of non-overlapping 32×32 tiles in
/// row-major order; partial right/bottom remainders are excluded. A raster
/// smaller than one tile yields no tiles.
pub fn dice(raster: &Raster4B) -> Vec<Tile> {
    let tiles_x = raster.width() / TILE_SIZE;
    let tiles_y = raster.height() / TILE_SIZE;
    let mut out = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (origin_col, origin_row) = (tx * TILE_SIZE, ty * TILE_SIZE);
            let mut data = Vec::with_capacity(Tile::SAMPLES);
            for band in 0..BANDS {
                for row in 0..TILE_SIZE {
                    let start =
                        (band * raster.height() + origin_row + row) * raster.width() + origin_col;
                    data.extend_from_slice(&raster.data()[start..start + TILE_SIZE]);
                }
            }
            out.push(Tile {
                data,
                origin_col,
                origin_row,
            });
        }
    }
    out
}

/// Edge-replicates the right/bottom borders until both dimensions are
/// multiples of `m`. The geo origin (top-left corner) is unchanged, so the
/// padded raster still registers with the original; idempotent.
pub fn pad_to_multiple(raster: &Raster4B, m: usize) -> Result<Raster4B, RasterError> {
    if m == 0 {
        return Err(RasterError::InvalidArgument {
            detail: "padding multiple must be >= 1".to_string(),
        });
    }
    let (w, h) = (raster.width(), raster.height());
    let new_w = w.div_ceil(m) * m;
    let new_h = h.div_ceil(m) * m;
    if new_w == w && new_h == h {
        return Ok(raster.clone());
    }
    let mut data = Vec::with_capacity(new_w * new_h * BANDS);
    for band in 0..BANDS {
        for row in 0..new_h {
            let src_row = row.min(h - 1);
            let start = (band * h + src_row) * w;
            data.extend_from_slice(&raster.data()[start..start + w]);
            let last = raster.sample(band, src_row, w - 1);
            data.resize(data.len() + (new_w - w), last);
        }
    }
    Raster4B::new(
        new_w,
        new_h,
        raster.dtype(),
        data,
        raster.geo,
        raster.nodata,
        raster.crs.clone(),
    )
}
