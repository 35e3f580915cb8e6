//! Label polygons: validated rings, even-odd point-in-polygon containment,
//! and a GeoJSON-subset parser (FeatureCollection of Polygon features with
//! `class_name` and `density` properties).

use serde::Deserialize;

use super::{ClassId, DatasetError};

/// A manually delineated label polygon in CRS coordinates. `rings[0]` is the
/// outer boundary; any further rings are holes under the even-odd rule. All
/// rings are closed (first point repeated last).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPolygon {
    rings: Vec<Vec<(f64, f64)>>,
    pub class_id: ClassId,
    pub density: f64,
}

impl LabelPolygon {
    pub fn new(
        rings: Vec<Vec<(f64, f64)>>,
        class_id: ClassId,
        density: f64,
    ) -> Result<Self, DatasetError> {
        if rings.is_empty() {
            return Err(DatasetError::BadPolygon {
                detail: "polygon has no rings".to_string(),
            });
        }
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(DatasetError::BadPolygon {
                    detail: format!("ring {i} has {} points, need >= 4 (closed)", ring.len()),
                });
            }
            if ring.first() != ring.last() {
                return Err(DatasetError::BadPolygon {
                    detail: format!("ring {i} is not closed (first point != last point)"),
                });
            }
            if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(DatasetError::BadPolygon {
                    detail: format!("ring {i} contains non-finite coordinates"),
                });
            }
        }
        if !(0.0..=1.0).contains(&density) {
            return Err(DatasetError::BadPolygon {
                detail: format!("density must be in [0, 1], got {density}"),
            });
        }
        Ok(LabelPolygon {
            rings,
            class_id,
            density,
        })
    }

    pub fn rings(&self) -> &[Vec<(f64, f64)>] {
        &self.rings
    }

    /// Even-odd containment: a horizontal ray from (x, y) toward +∞ crosses
    /// the polygon's edges; an odd crossing count over all rings means the
    /// point is inside. Holes (additional rings) are excluded naturally.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for edge in ring.windows(2) {
                let (x1, y1) = edge[0];
                let (x2, y2) = edge[1];
                if (y1 > y) != (y2 > y) {
                    let x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
                    if x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

#[derive(Deserialize)]
struct GeoJsonRoot {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<GeoJsonFeature>,
}

#[derive(Deserialize)]
struct GeoJsonFeature {
    #[serde(rename = "type")]
    kind: String,
    geometry: GeoJsonGeometry,
    properties: GeoJsonProperties,
}

#[derive(Deserialize)]
struct GeoJsonGeometry {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Vec<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
struct GeoJsonProperties {
    class_name: String,
    density: f64,
}

/// Parses the GeoJSON subset used for label input: a FeatureCollection of
/// Polygon features whose properties carry `class_name` (one of the five
/// class names) and `density` (fraction in [0, 1]). Extra JSON members are
/// tolerated apart from the required structure; feature order is preserved.
pub fn parse_geojson_polygons(text: &str) -> Result<Vec<LabelPolygon>, DatasetError> {
    let root: GeoJsonRoot = serde_json::from_str(text).map_err(|e| DatasetError::BadGeoJson {
        detail: e.to_string(),
    })?;
    if root.kind != "FeatureCollection" {
        return Err(DatasetError::BadGeoJson {
            detail: format!("expected FeatureCollection, got {:?}", root.kind),
        });
    }
    let mut out = Vec::with_capacity(root.features.len());
    for (i, feature) in root.features.into_iter().enumerate() {
        if feature.kind != "Feature" {
            return Err(DatasetError::BadGeoJson {
                detail: format!("features[{i}] has type {:?}, expected Feature", feature.kind),
            });
        }
        if feature.geometry.kind != "Polygon" {
            return Err(DatasetError::BadGeoJson {
                detail: format!(
                    "features[{i}] geometry is {:?}; only Polygon is supported",
                    feature.geometry.kind
                ),
            });
        }
        let class_id = ClassId::from_name(&feature.properties.class_name).ok_or(
            DatasetError::UnknownClassName {
                name: feature.properties.class_name.clone(),
            },
        )?;
        let rings: Vec<Vec<(f64, f64)>> = feature
            .geometry
            .coordinates
            .into_iter()
            .map(|ring| ring.into_iter().map(|[x, y]| (x, y)).collect())
            .collect();
        out.push(
            LabelPolygon::new(rings, class_id, feature.properties.density).map_err(|e| {
                DatasetError::BadGeoJson {
                    detail: format!("features[{i}]: {e}"),
                }
            })?,
        );
    }
    Ok(out)
}
