//! Dataset curation: turn labeled polygons plus rasters into a filtered,
//! split, normalized sample set with a JSON-Lines manifest and an adjacent
//! raw tile payload file.

mod augment;
mod curate;
mod geom;
mod manifest;
mod split;

pub use augment::{augment_tile, normalize_tile, reflect_crop, rot90_tile};
pub use curate::{curate, CoverageRule, CurationConfig};
pub use geom::{parse_geojson_polygons, LabelPolygon};
pub use manifest::{
    read_manifest, write_manifest, Manifest, ManifestMeta, ManifestView, Sample, Split,
    SplitCounts, MANIFEST_FILE, TILES_FILE,
};
pub use split::split;
pub(crate) use manifest::validate_band_stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RasterError;

/// The five land-cover classes, in label order 0–4.
pub const CLASS_NAMES: [&str; 5] = ["Conifer", "Hardwood", "Shrub", "ReforestedTree", "Barren"];

/// Number of classes.
pub const N_CLASSES: usize = 5;

/// Sentinel class value reserved for nodata cells in classification maps;
/// never a sample label.
pub const NODATA_CLASS: u8 = 255;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("curation produced no samples (check density/NDVI thresholds and polygon coverage)")]
    EmptyResult,
    #[error("every covered tile matched polygons of two or more classes ({conflicted} conflicts)")]
    OverlapConflict { conflicted: u64 },
    #[error("insufficient samples: {detail}")]
    InsufficientSamples { detail: String },
    #[error("degenerate band statistics: {detail}")]
    DegenerateStats { detail: String },
    #[error("invalid polygon: {detail}")]
    BadPolygon { detail: String },
    #[error("invalid GeoJSON: {detail}")]
    BadGeoJson { detail: String },
    #[error("invalid manifest: {detail}")]
    BadManifest { detail: String },
    #[error("unknown class name {name:?} (expected one of Conifer, Hardwood, Shrub, ReforestedTree, Barren)")]
    UnknownClassName { name: String },
    #[error("invalid configuration: {detail}")]
    BadConfig { detail: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated land-cover class label, 0–4.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassId(u8);

impl ClassId {
    pub fn new(value: u8) -> Result<Self, DatasetError> {
        if (value as usize) < N_CLASSES {
            Ok(ClassId(value))
        } else {
            Err(DatasetError::BadConfig {
                detail: format!("class id must be 0-4, got {value}"),
            })
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.0 as usize]
    }

    pub fn from_name(name: &str) -> Option<ClassId> {
        CLASS_NAMES.iter().position(|&n| n == name).map(|i| ClassId(i as u8))
    }
}

impl TryFrom<u8> for ClassId {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        ClassId::new(value).map_err(|e| e.to_string())
    }
}

impl From<ClassId> for u8 {
    fn from(c: ClassId) -> u8 {
        c.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ids_map_to_names_and_back() {
        for (i, name) in CLASS_NAMES.iter().enumerate() {
            let c = ClassId::new(i as u8).unwrap();
            assert_eq!(c.name(), *name);
            assert_eq!(ClassId::from_name(name), Some(c));
        }
        assert!(ClassId::new(5).is_err());
        assert!(ClassId::from_name("Water").is_none());
        // 255 is the map nodata sentinel, not a label.
        assert!(ClassId::new(NODATA_CLASS).is_err());
    }

    #[test]
    fn class_id_serde_rejects_out_of_range() {
        let c: ClassId = serde_json::from_str("3").unwrap();
        assert_eq!(c.value(), 3);
        assert_eq!(serde_json::to_string(&c).unwrap(), "3");
        assert!(serde_json::from_str::<ClassId>("7").is_err());
    }
}
