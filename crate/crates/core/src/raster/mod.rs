//! Georeferenced 4-band raster handling: the R4B container format,
//! bilinear resampling, NDVI, 32×32 dicing, and edge padding.
//!
//! All operations are pure functions of their inputs; rasters have no
//! interior mutability and can be shared read-only across threads.

mod format;
mod ops;

pub use format::{read_r4b, write_r4b, R4B_MAGIC};
pub use ops::{dice, ndvi_raster, ndvi_tile, pad_to_multiple, resample, tile_mean_ndvi};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of a dicing tile, in pixels.
pub const TILE_SIZE: usize = 32;

/// Number of spectral bands in every raster, in order R, G, B, NIR.
pub const BANDS: usize = 4;

/// Band indices by name.
pub const BAND_R: usize = 0;
pub const BAND_G: usize = 1;
pub const BAND_B: usize = 2;
pub const BAND_NIR: usize = 3;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("not an R4B file: expected magic {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("header/payload mismatch: {detail}")]
    HeaderMismatch { detail: String },
    #[error("unsupported dtype {dtype:?} (expected \"u8\" or \"u16le\")")]
    UnsupportedDtype { dtype: String },
    #[error("invalid R4B header: {detail}")]
    BadHeader { detail: String },
    #[error("invalid raster: {detail}")]
    InvalidRaster { detail: String },
    #[error("invalid argument: {detail}")]
    InvalidArgument { detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sample storage type of a raster. Values are held internally as `u16`
/// regardless of dtype; `U8` rasters additionally guarantee every sample
/// (and the nodata sentinel) fits in 8 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "u16le")]
    U16le,
}

impl Dtype {
    pub fn max_value(self) -> u16 {
        match self {
            Dtype::U8 => u8::MAX as u16,
            Dtype::U16le => u16::MAX,
        }
    }

    pub fn bytes_per_sample(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16le => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::U16le => "u16le",
        }
    }

    pub fn from_name(name: &str) -> Option<Dtype> {
        match name {
            "u8" => Some(Dtype::U8),
            "u16le" => Some(Dtype::U16le),
            _ => None,
        }
    }
}

/// Affine georeferencing for a north-up raster: pixel (col, row) occupies
/// the square whose top-left corner is
/// `(origin_x + col·pixel_size_x, origin_y − row·pixel_size_y)`.
/// Rows advance southward; both pixel sizes are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    /// CRS coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + (col + 0.5) * self.pixel_size_x,
            self.origin_y - (row + 0.5) * self.pixel_size_y,
        )
    }

    /// CRS coordinates of the top-left corner of pixel (col, row).
    pub fn pixel_corner(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size_x,
            self.origin_y - row * self.pixel_size_y,
        )
    }
}

/// A georeferenced 4-band (R, G, B, NIR) pixel grid. Samples are stored
/// band-sequentially, row-major within each band.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster4B {
    width: usize,
    height: usize,
    dtype: Dtype,
    data: Vec<u16>,
    pub geo: GeoTransform,
    pub nodata: Option<u16>,
    pub crs: String,
}

impl Raster4B {
    /// Builds a raster, validating every structural invariant: non-empty
    /// dimensions, exact buffer length, positive pixel sizes, and samples
    /// (plus the nodata sentinel) within the dtype's range.
    pub fn new(
        width: usize,
        height: usize,
        dtype: Dtype,
        data: Vec<u16>,
        geo: GeoTransform,
        nodata: Option<u16>,
        crs: String,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidRaster {
                detail: format!("dimensions must be >= 1, got {width}x{height}"),
            });
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(BANDS))
            .ok_or_else(|| RasterError::InvalidRaster {
                detail: format!("dimensions {width}x{height} overflow"),
            })?;
        if data.len() != expected {
            return Err(RasterError::InvalidRaster {
                detail: format!(
                    "pixel buffer has {} samples, expected {width}x{height}x4 = {expected}",
                    data.len()
                ),
            });
        }
        if !(geo.pixel_size_x > 0.0) || !(geo.pixel_size_y > 0.0) {
            return Err(RasterError::InvalidRaster {
                detail: format!(
                    "pixel sizes must be strictly positive, got ({}, {})",
                    geo.pixel_size_x, geo.pixel_size_y
                ),
            });
        }
        let max = dtype.max_value();
        if dtype == Dtype::U8 {
            if let Some(bad) = data.iter().find(|&&v| v > max) {
                return Err(RasterError::InvalidRaster {
                    detail: format!("sample {bad} exceeds u8 range"),
                });
            }
        }
        if let Some(nd) = nodata {
            if nd > max {
                return Err(RasterError::InvalidRaster {
                    detail: format!("nodata value {nd} exceeds {} range", dtype.name()),
                });
            }
        }
        Ok(Raster4B {
            width,
            height,
            dtype,
            data,
            geo,
            nodata,
            crs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    /// All samples, band-sequential row-major.
    pub fn data(&self) -> &[u16] {
        &self.data
    }

    /// One band's samples, row-major.
    pub fn band(&self, band: usize) -> &[u16] {
        let n = self.width * self.height;
        &self.data[band * n..(band + 1) * n]
    }

    /// Sample of `band` at pixel (col, row).
    #[inline]
    pub fn sample(&self, band: usize, row: usize, col: usize) -> u16 {
        self.data[(band * self.height + row) * self.width + col]
    }

    /// A pixel is nodata when any of its band samples equals the sentinel.
    #[inline]
    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        match self.nodata {
            None => false,
            Some(nd) => (0..BANDS).any(|b| self.sample(b, row, col) == nd),
        }
    }
}

/// A 32×32×4 patch cut from a raster. Samples are channel-major
/// (band, then row, then column); origins index into the source raster and
/// are multiples of [`TILE_SIZE`] when produced by [`dice`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    pub data: Vec<u16>,
    pub origin_col: usize,
    pub origin_row: usize,
}

impl Tile {
    pub const SAMPLES: usize = BANDS * TILE_SIZE * TILE_SIZE;

    /// Sample of `band` at tile-local (row, col).
    #[inline]
    pub fn sample(&self, band: usize, row: usize, col: usize) -> u16 {
        self.data[(band * TILE_SIZE + row) * TILE_SIZE + col]
    }
}
