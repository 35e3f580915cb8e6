//! Whole-raster classification: pad, dice, batch-classify tiles into a
//! tile-resolution class map, denoise with a 3×3 majority filter, and render
//! or persist the map.

mod classify;
mod filter;
mod format;
mod render;

pub use classify::{classify_raster, ClassifyOptions, ClassifyOutcome};
pub use filter::majority_filter;
pub use format::{read_cmap, write_cmap, CMAP_MAGIC};
pub use render::{render_map, Palette, DEFAULT_PALETTE};

use thiserror::Error;

use crate::dataset::{DatasetError, NODATA_CLASS, N_CLASSES};
use crate::nn::NnError;
use crate::raster::{GeoTransform, RasterError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(
        "raster resolution ({actual_x}, {actual_y}) differs from the checkpoint's \
         training resolution ({expected_x}, {expected_y})"
    )]
    ResolutionMismatch {
        expected_x: f64,
        expected_y: f64,
        actual_x: f64,
        actual_y: f64,
    },
    #[error("checkpoint carries no band statistics; cannot normalize tiles")]
    MissingStats,
    #[error("invalid argument: {detail}")]
    BadArgument { detail: String },
    #[error("invalid class map: {detail}")]
    BadMap { detail: String },
    #[error("not a CMAP file: expected magic {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("invalid CMAP header: {detail}")]
    BadHeader { detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A tile-resolution grid of predicted classes: row-major cells in
/// {0..4, 255 = nodata}, georeferenced with pixel sizes 32× the source
/// raster's.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    width_tiles: usize,
    height_tiles: usize,
    cells: Vec<u8>,
    pub geo: GeoTransform,
    pub year_tag: Option<String>,
}

impl ClassMap {
    pub fn new(
        width_tiles: usize,
        height_tiles: usize,
        cells: Vec<u8>,
        geo: GeoTransform,
        year_tag: Option<String>,
    ) -> Result<Self, InferenceError> {
        if width_tiles == 0 || height_tiles == 0 {
            return Err(InferenceError::BadMap {
                detail: format!("dimensions must be >= 1, got {width_tiles}x{height_tiles}"),
            });
        }
        if cells.len() != width_tiles * height_tiles {
            return Err(InferenceError::BadMap {
                detail: format!(
                    "{} cells for a {width_tiles}x{height_tiles} grid",
                    cells.len()
                ),
            });
        }
        if let Some(bad) = cells
            .iter()
            .find(|&&c| (c as usize) >= N_CLASSES && c != NODATA_CLASS)
        {
            return Err(InferenceError::BadMap {
                detail: format!("cell value {bad} is not a class id or nodata"),
            });
        }
        if !(geo.pixel_size_x > 0.0) || !(geo.pixel_size_y > 0.0) {
            return Err(InferenceError::BadMap {
                detail: "pixel sizes must be strictly positive".to_string(),
            });
        }
        Ok(ClassMap {
            width_tiles,
            height_tiles,
            cells,
            geo,
            year_tag,
        })
    }

    pub fn width_tiles(&self) -> usize {
        self.width_tiles
    }

    pub fn height_tiles(&self) -> usize {
        self.height_tiles
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn cell(&self, col: usize, row: usize) -> u8 {
        self.cells[row * self.width_tiles + col]
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::map_from;
    use super::*;

    #[test]
    fn class_map_rejects_bad_cells_and_sizes() {
        let geo = GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size_x: 19.2,
            pixel_size_y: 19.2,
        };
        assert!(matches!(
            ClassMap::new(2, 2, vec![0, 1, 2], geo, None),
            Err(InferenceError::BadMap { .. })
        ));
        assert!(matches!(
            ClassMap::new(2, 2, vec![0, 1, 2, 5], geo, None),
            Err(InferenceError::BadMap { .. })
        ));
        assert!(ClassMap::new(2, 2, vec![0, 1, 2, 255], geo, None).is_ok());
    }

    #[test]
    fn cell_indexing_is_row_major() {
        let m = map_from(&[0, 1, 2, 3, 4, 255], 3, 2);
        assert_eq!(m.cell(0, 0), 0);
        assert_eq!(m.cell(2, 0), 2);
        assert_eq!(m.cell(0, 1), 3);
        assert_eq!(m.cell(2, 1), 255);
    }
}
