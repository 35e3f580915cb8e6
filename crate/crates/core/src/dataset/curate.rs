//! Polygon-driven tile curation: dice each raster, keep tiles covered by a
//! sufficiently dense label polygon, drop cross-class conflicts and
//! low-NDVI vegetation tiles, and assemble the (unsplit) manifest.

use serde::{Deserialize, Serialize};

use super::geom::LabelPolygon;
use super::manifest::{Manifest, Sample, Split};
use super::{ClassId, DatasetError, N_CLASSES};
use crate::raster::{dice, tile_mean_ndvi, GeoTransform, Raster4B, Tile, TILE_SIZE};

/// Which probe points of a tile must fall strictly inside a polygon for the
/// tile to count as covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageRule {
    /// Tile center plus all four corners (conservative default; avoids
    /// mixed-class edge tiles).
    CenterAndCorners,
    /// Tile center only (permissive; admits boundary tiles).
    CenterOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationConfig {
    /// Minimum polygon coverage density for its tiles to be used.
    pub density_threshold: f64,
    /// Tiles of the filtered classes with mean NDVI below this are dropped.
    pub ndvi_threshold: f64,
    /// Classes subject to the NDVI filter (default Conifer and Hardwood,
    /// whose low-NDVI tiles are most likely not vegetation).
    pub ndvi_filtered_classes: Vec<u8>,
    pub coverage_rule: CoverageRule,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            density_threshold: 0.6,
            ndvi_threshold: 0.2,
            ndvi_filtered_classes: vec![0, 1],
            coverage_rule: CoverageRule::CenterAndCorners,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.density_threshold) {
            return Err(DatasetError::BadConfig {
                detail: format!(
                    "density_threshold must be in [0, 1], got {}",
                    self.density_threshold
                ),
            });
        }
        if !self.ndvi_threshold.is_finite() || !(-1.0..=1.0).contains(&self.ndvi_threshold) {
            return Err(DatasetError::BadConfig {
                detail: format!("ndvi_threshold must be in [-1, 1], got {}", self.ndvi_threshold),
            });
        }
        for &c in &self.ndvi_filtered_classes {
            if c as usize >= N_CLASSES {
                return Err(DatasetError::BadConfig {
                    detail: format!("ndvi_filtered_classes holds invalid class {c}"),
                });
            }
        }
        Ok(())
    }
}

/// True when the tile at (origin_col, origin_row) passes the coverage rule
/// for `poly`: the required probe points are strictly inside (even-odd).
fn covers(poly: &LabelPolygon, geo: &GeoTransform, tile: &Tile, rule: CoverageRule) -> bool {
    let (c0, r0) = (tile.origin_col as f64, tile.origin_row as f64);
    let s = TILE_SIZE as f64;
    let center = geo.pixel_corner(c0 + s / 2.0, r0 + s / 2.0);
    let mut probes = vec![center];
    if rule == CoverageRule::CenterAndCorners {
        probes.push(geo.pixel_corner(c0, r0));
        probes.push(geo.pixel_corner(c0 + s, r0));
        probes.push(geo.pixel_corner(c0, r0 + s));
        probes.push(geo.pixel_corner(c0 + s, r0 + s));
    }
    probes.iter().all(|&(x, y)| poly.contains(x, y))
}

/// Outer-ring bounding box, for cheap rejection before the full test.
fn bbox(poly: &LabelPolygon) -> (f64, f64, f64, f64) {
    let ring = &poly.rings()[0];
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in ring {
        b.0 = b.0.min(x);
        b.1 = b.1.max(x);
        b.2 = b.2.min(y);
        b.3 = b.3.max(y);
    }
    b
}

/// Curates samples from `(source_id, raster)` pairs and label polygons.
///
/// Deterministic order: rasters as given, row-major tiles within each
/// raster. For each tile, polygons (as given) whose density passes the
/// threshold vote with their class: no vote skips the tile, votes from two
/// or more distinct classes discard it as an overlap conflict (counted in
/// the manifest; an error only when every covered tile conflicts), and a
/// single class labels it — duplicate same-class polygons yield one sample.
/// Labeled tiles of the NDVI-filtered classes are then dropped when their
/// mean NDVI is below the threshold.
pub fn curate(
    rasters: &[(String, Raster4B)],
    polygons: &[LabelPolygon],
    cfg: &CurationConfig,
) -> Result<Manifest, DatasetError> {
    cfg.validate()?;
    if rasters.is_empty() {
        return Err(DatasetError::EmptyResult);
    }
    let dtype = rasters[0].1.dtype();
    if rasters.iter().any(|(_, r)| r.dtype() != dtype) {
        return Err(DatasetError::BadConfig {
            detail: "all rasters must share one dtype (tile payloads are homogeneous)"
                .to_string(),
        });
    }
    let eligible: Vec<(&LabelPolygon, (f64, f64, f64, f64))> = polygons
        .iter()
        .filter(|p| p.density >= cfg.density_threshold)
        .map(|p| (p, bbox(p)))
        .collect();
    let mut samples: Vec<Sample> = Vec::new();
    let mut covered_tiles = 0u64;
    let mut conflicts = 0u64;
    for (source_id, raster) in rasters {
        for tile in dice(raster) {
            let mut label: Option<ClassId> = None;
            let mut conflicted = false;
            for (poly, bb) in &eligible {
                // Tile extent in CRS space, for the bbox pre-check.
                let (x0, y_hi) = raster.geo.pixel_corner(tile.origin_col as f64, tile.origin_row as f64);
                let (x1, y_lo) = raster.geo.pixel_corner(
                    (tile.origin_col + TILE_SIZE) as f64,
                    (tile.origin_row + TILE_SIZE) as f64,
                );
                if x1 < bb.0 || x0 > bb.1 || y_hi < bb.2 || y_lo > bb.3 {
                    continue;
                }
                if covers(poly, &raster.geo, &tile, cfg.coverage_rule) {
                    match label {
                        None => label = Some(poly.class_id),
                        Some(existing) if existing != poly.class_id => {
                            conflicted = true;
                            break;
                        }
                        Some(_) => {}
                    }
                }
            }
            let Some(label) = label else { continue };
            covered_tiles += 1;
            if conflicted {
                conflicts += 1;
                continue;
            }
            let mean_ndvi = tile_mean_ndvi(&tile, raster.nodata);
            if cfg.ndvi_filtered_classes.contains(&label.value()) && mean_ndvi < cfg.ndvi_threshold
            {
                continue;
            }
            samples.push(Sample {
                tile,
                label,
                split: Split::Train,
                source_id: source_id.clone(),
                mean_ndvi,
            });
        }
    }
    if covered_tiles > 0 && conflicts == covered_tiles {
        return Err(DatasetError::OverlapConflict { conflicted: conflicts });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyResult);
    }
    let nodata = rasters[0].1.nodata;
    Manifest::assemble(samples, cfg.clone(), 0, dtype, nodata, conflicts)
}
