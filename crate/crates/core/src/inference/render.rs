//! Rendering class maps to binary PPM images, one pixel per cell.

use super::ClassMap;
use crate::dataset::{NODATA_CLASS, N_CLASSES};

/// RGB triples for the five classes in id order, plus nodata last.
pub type Palette = [[u8; 3]; N_CLASSES + 1];

/// Conifer dark green, Hardwood light green, Shrub tan, ReforestedTree
/// cyan-green, Barren brown, nodata black.
pub const DEFAULT_PALETTE: Palette = [
    [27, 94, 32],
    [124, 179, 66],
    [210, 180, 140],
    [0, 150, 136],
    [121, 85, 72],
    [0, 0, 0],
];

/// Serializes the map as a binary PPM (P6, maxval 255) with one pixel per
/// cell, row-major from the top-left cell.
pub fn render_map(map: &ClassMap, palette: &Palette) -> Vec<u8> {
    let (w, h) = (map.width_tiles(), map.height_tiles());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for &cell in map.cells() {
        let rgb = if cell == NODATA_CLASS {
            palette[N_CLASSES]
        } else {
            palette[cell as usize]
        };
        out.extend_from_slice(&rgb);
    }
    out
}
