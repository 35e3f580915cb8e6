//! The CMAP on-disk container for class maps: 4-byte magic, a u32
//! little-endian JSON header length, the JSON header, then one byte per cell
//! row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassMap, InferenceError};
use crate::dataset::CLASS_NAMES;
use crate::raster::GeoTransform;

pub const CMAP_MAGIC: &[u8; 4] = b"CMAP";

/// Field order is part of the format: headers serialize byte-identically
/// across writes.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    width_tiles: usize,
    height_tiles: usize,
    geo: GeoTransform,
    year_tag: Option<String>,
    class_names: Vec<String>,
}

pub fn write_cmap(map: &ClassMap, path: &Path) -> Result<(), InferenceError> {
    let header = Header {
        width_tiles: map.width_tiles(),
        height_tiles: map.height_tiles(),
        geo: map.geo,
        year_tag: map.year_tag.clone(),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| InferenceError::BadHeader {
        detail: format!("header serialization failed: {e}"),
    })?;
    let mut bytes = Vec::with_capacity(8 + header_json.len() + map.cells().len());
    bytes.extend_from_slice(CMAP_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(map.cells());
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_cmap(path: &Path) -> Result<ClassMap, InferenceError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 || &bytes[..4] != CMAP_MAGIC {
        return Err(InferenceError::BadMagic { expected: "CMAP" });
    }
    if bytes.len() < 8 {
        return Err(InferenceError::BadHeader {
            detail: "file ends inside the header length field".to_string(),
        });
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(InferenceError::BadHeader {
            detail: format!(
                "header length {header_len} exceeds remaining {} bytes",
                body.len()
            ),
        });
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| InferenceError::BadHeader {
            detail: format!("header is not valid JSON: {e}"),
        })?;
    if header.class_names != CLASS_NAMES {
        return Err(InferenceError::BadHeader {
            detail: format!("unrecognized class names {:?}", header.class_names),
        });
    }
    let payload = &body[header_len..];
    let expected = header
        .width_tiles
        .checked_mul(header.height_tiles)
        .ok_or_else(|| InferenceError::BadHeader {
            detail: "cell count overflows".to_string(),
        })?;
    if payload.len() != expected {
        return Err(InferenceError::BadHeader {
            detail: format!("expected {expected} cell bytes, found {}", payload.len()),
        });
    }
    ClassMap::new(
        header.width_tiles,
        header.height_tiles,
        payload.to_vec(),
        header.geo,
        header.year_tag,
    )
}

#[cfg(test)]
mod tests {
    use super::super::test_support::map_from;
    use super::*;
    use std::fs;

    fn tagged(cells: &[u8], w: usize, h: usize, tag: &str) -> ClassMap {
        let mut m = map_from(cells, w, h);
        m.year_tag = Some(tag.to_string());
        m
    }

    #[test]
    fn round_trip_is_bit_exact_and_rewrites_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.cmap");
        let m = tagged(&[0, 1, 2, 3, 4, 255], 3, 2, "2014");
        write_cmap(&m, &path).unwrap();
        let back = read_cmap(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.year_tag.as_deref(), Some("2014"));
        let first = fs::read(&path).unwrap();
        write_cmap(&back, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        assert_eq!(&first[..4], b"CMAP");
    }

    #[test]
    fn magic_and_truncation_failures_are_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cmap");
        fs::write(&path, b"CMAQ, definitely not a class map").unwrap();
        assert!(matches!(read_cmap(&path), Err(InferenceError::BadMagic { .. })));
        fs::write(&path, b"CM").unwrap();
        assert!(matches!(read_cmap(&path), Err(InferenceError::BadMagic { .. })));
        fs::write(&path, b"CMAP\x09").unwrap();
        assert!(matches!(read_cmap(&path), Err(InferenceError::BadHeader { .. })));
        // Header length pointing past the end of the file.
        let mut bytes = b"CMAP".to_vec();
        bytes.extend_from_slice(&1000u32.to_le_bytes());
        bytes.extend_from_slice(b"{}");
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_cmap(&path), Err(InferenceError::BadHeader { .. })));
    }

    #[test]
    fn payload_must_match_the_grid_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.cmap");
        write_cmap(&map_from(&[1, 2, 3, 4], 2, 2), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut truncated = good.clone();
        truncated.pop();
        fs::write(&path, &truncated).unwrap();
        let err = read_cmap(&path).unwrap_err();
        assert!(err.to_string().contains("expected 4 cell bytes"), "{err}");

        let mut trailing = good.clone();
        trailing.push(0);
        fs::write(&path, &trailing).unwrap();
        assert!(matches!(read_cmap(&path), Err(InferenceError::BadHeader { .. })));
    }

    #[test]
    fn out_of_range_cells_and_foreign_class_names_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.cmap");
        write_cmap(&map_from(&[1, 2, 3, 4], 2, 2), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_cell = good.clone();
        *bad_cell.last_mut().unwrap() = 6;
        fs::write(&path, &bad_cell).unwrap();
        assert!(matches!(read_cmap(&path), Err(InferenceError::BadMap { .. })));

        let mut renamed = good;
        let at = renamed.windows(7).position(|w| w == b"Conifer").unwrap();
        renamed[at..at + 7].copy_from_slice(b"Cypress");
        fs::write(&path, renamed).unwrap();
        let err = read_cmap(&path).unwrap_err();
        assert!(err.to_string().contains("Cypress"), "{err}");
    }
}
