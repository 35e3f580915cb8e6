//! Area distributions and multi-year change reports.

use super::AnalysisError;
use crate::dataset::{LabelPolygon, CLASS_NAMES, NODATA_CLASS, N_CLASSES};
use crate::inference::ClassMap;

/// Per-class area fractions of one map, normalized by the valid
/// (non-nodata) cell count so missing data never dilutes the distribution;
/// nodata is reported separately. `cell_area` is in squared CRS units
/// (the map's per-cell pixel sizes multiplied out, i.e. (32·raster pixel)²
/// for maps produced by classification).
#[derive(Debug, Clone, PartialEq)]
pub struct AreaDistribution {
    pub year_tag: String,
    pub fractions: [f64; N_CLASSES],
    pub valid_cells: u64,
    pub nodata_cells: u64,
    pub cell_area: f64,
}

/// Distributions for a strictly ascending sequence of years plus per-class
/// fraction deltas between consecutive years (`deltas[i]` = year i+1 minus
/// year i).
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeReport {
    pub distributions: Vec<AreaDistribution>,
    pub deltas: Vec<[f64; N_CLASSES]>,
    pub mask_ref: Option<String>,
}

fn in_mask(mask: Option<&[LabelPolygon]>, x: f64, y: f64) -> bool {
    match mask {
        None => true,
        Some(polys) => polys.iter().any(|p| p.contains(x, y)),
    }
}

/// Counts cells per class — restricted, when a mask is given, to cells whose
/// center lies inside some mask polygon — and divides by the valid cell
/// count. An all-nodata (or fully masked-out) map yields all-zero fractions
/// with `valid_cells` 0.
pub fn area_distribution(map: &ClassMap, mask: Option<&[LabelPolygon]>) -> AreaDistribution {
    let mut counts = [0u64; N_CLASSES];
    let mut nodata = 0u64;
    for row in 0..map.height_tiles() {
        for col in 0..map.width_tiles() {
            let (cx, cy) = map.geo.pixel_center(col as f64, row as f64);
            if !in_mask(mask, cx, cy) {
                continue;
            }
            let cell = map.cell(col, row);
            if cell == NODATA_CLASS {
                nodata += 1;
            } else {
                counts[cell as usize] += 1;
            }
        }
    }
    let valid: u64 = counts.iter().sum();
    let mut fractions = [0.0; N_CLASSES];
    if valid > 0 {
        for (f, &c) in fractions.iter_mut().zip(&counts) {
            *f = c as f64 / valid as f64;
        }
    }
    AreaDistribution {
        year_tag: map.year_tag.clone().unwrap_or_default(),
        fractions,
        valid_cells: valid,
        nodata_cells: nodata,
        cell_area: map.geo.pixel_size_x * map.geo.pixel_size_y,
    }
}

/// Builds the multi-year report: one distribution per map plus n−1 delta
/// rows. Maps must share dimensions and georeferencing and carry strictly
/// ascending year tags.
pub fn change_report(
    maps: &[ClassMap],
    mask: Option<&[LabelPolygon]>,
    mask_ref: Option<String>,
) -> Result<ChangeReport, AnalysisError> {
    if maps.len() < 2 {
        return Err(AnalysisError::BadReport {
            detail: format!("need at least 2 maps, got {}", maps.len()),
        });
    }
    let first = &maps[0];
    for (i, m) in maps.iter().enumerate() {
        if m.year_tag.is_none() {
            return Err(AnalysisError::BadReport {
                detail: format!("map {i} has no year tag"),
            });
        }
        if (m.width_tiles(), m.height_tiles()) != (first.width_tiles(), first.height_tiles())
            || m.geo != first.geo
        {
            return Err(AnalysisError::GridMismatch {
                detail: format!(
                    "map {i} is {}x{} at {:?}; map 0 is {}x{} at {:?}",
                    m.width_tiles(),
                    m.height_tiles(),
                    m.geo,
                    first.width_tiles(),
                    first.height_tiles(),
                    first.geo
                ),
            });
        }
    }
    for pair in maps.windows(2) {
        let (a, b) = (pair[0].year_tag.as_ref().unwrap(), pair[1].year_tag.as_ref().unwrap());
        if a >= b {
            return Err(AnalysisError::BadReport {
                detail: format!("year tags must be strictly ascending, got {a:?} then {b:?}"),
            });
        }
    }
    let distributions: Vec<AreaDistribution> =
        maps.iter().map(|m| area_distribution(m, mask)).collect();
    let deltas = distributions
        .windows(2)
        .map(|pair| {
            let mut d = [0.0; N_CLASSES];
            for k in 0..N_CLASSES {
                d[k] = pair[1].fractions[k] - pair[0].fractions[k];
            }
            d
        })
        .collect();
    Ok(ChangeReport { distributions, deltas, mask_ref })
}

/// Serializes the report as CSV: one row per (year, class), with
/// `delta_from_prev` blank on the first year's rows.
pub fn report_csv(report: &ChangeReport) -> String {
    let mut out = String::from("year,class_name,fraction,delta_from_prev,valid_cells,nodata_cells\n");
    for (i, d) in report.distributions.iter().enumerate() {
        for k in 0..N_CLASSES {
            let delta = if i == 0 {
                String::new()
            } else {
                report.deltas[i - 1][k].to_string()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                d.year_tag, CLASS_NAMES[k], d.fractions[k], delta, d.valid_cells, d.nodata_cells
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::test_support::map_from;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn tagged(cells: &[u8], w: usize, h: usize, tag: &str) -> ClassMap {
        let mut m = map_from(cells, w, h);
        m.year_tag = Some(tag.to_string());
        m
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> LabelPolygon {
        LabelPolygon::new(
            vec![vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]],
            crate::dataset::ClassId::new(0).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn forced_arithmetic_on_a_two_by_two_map() {
        let d = area_distribution(&map_from(&[0, 0, 2, 255], 2, 2), None);
        assert_eq!(d.fractions[0], 2.0 / 3.0);
        assert_eq!(d.fractions[2], 1.0 / 3.0);
        assert_eq!(d.fractions[1] + d.fractions[3] + d.fractions[4], 0.0);
        assert_eq!((d.valid_cells, d.nodata_cells), (3, 1));
        assert_eq!(d.cell_area, 19.2 * 19.2);

        let uniform = area_distribution(&map_from(&vec![4u8; 12], 4, 3), None);
        assert_eq!(uniform.fractions[4], 1.0);

        let empty = area_distribution(&map_from(&[255, 255], 2, 1), None);
        assert_eq!(empty.fractions, [0.0; 5]);
        assert_eq!(empty.valid_cells, 0);
        assert_eq!(empty.nodata_cells, 2);
    }

    #[test]
    fn fractions_match_a_brute_force_recount_and_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let cells: Vec<u8> = (0..400)
            .map(|_| if rng.random_bool(0.1) { 255 } else { rng.random_range(0..5u8) })
            .collect();
        let d = area_distribution(&map_from(&cells, 20, 20), None);
        let mut counts = [0u64; 5];
        let mut valid = 0u64;
        for &c in &cells {
            if c != 255 {
                counts[c as usize] += 1;
                valid += 1;
            }
        }
        for k in 0..5 {
            assert_eq!(d.fractions[k], counts[k] as f64 / valid as f64);
        }
        assert!((d.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn whole_map_mask_equals_no_mask_and_partial_masks_restrict() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let cells: Vec<u8> = (0..100).map(|_| rng.random_range(0..5u8)).collect();
        let m = map_from(&cells, 10, 10);
        // Cell centers span x in 9.6..182.4 and y in -9.6..-182.4 (north-up
        // geotransform: y decreases with row) at 19.2 per cell.
        let whole = [square(-1.0, -200.0, 200.0, 1.0)];
        assert_eq!(area_distribution(&m, Some(&whole)), area_distribution(&m, None));

        // Mask covering only the first column of cell centers.
        let column = [square(0.0, -200.0, 19.0, 1.0)];
        let d = area_distribution(&m, Some(&column));
        assert_eq!(d.valid_cells, 10);
        let mut counts = [0u64; 5];
        for row in 0..10 {
            counts[cells[row * 10] as usize] += 1;
        }
        for k in 0..5 {
            assert_eq!(d.fractions[k], counts[k] as f64 / 10.0);
        }

        // Fully masked-out map behaves like an all-nodata one.
        let nowhere = [square(-50.0, -50.0, -40.0, -40.0)];
        let d = area_distribution(&m, Some(&nowhere));
        assert_eq!(d.valid_cells, 0);
        assert_eq!(d.fractions, [0.0; 5]);
    }

    #[test]
    fn fractions_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cells: Vec<u8> = (0..144).map(|_| rng.random_range(0..5u8)).collect();
        let perm = [3u8, 0, 4, 1, 2];
        let relabeled: Vec<u8> = cells.iter().map(|&c| perm[c as usize]).collect();
        let base = area_distribution(&map_from(&cells, 12, 12), None);
        let moved = area_distribution(&map_from(&relabeled, 12, 12), None);
        for k in 0..5 {
            assert_eq!(moved.fractions[perm[k] as usize], base.fractions[k]);
        }
    }

    #[test]
    fn identical_maps_report_zero_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let cells: Vec<u8> = (0..64).map(|_| rng.random_range(0..5u8)).collect();
        let maps = [tagged(&cells, 8, 8, "2009"), tagged(&cells, 8, 8, "2012")];
        let r = change_report(&maps, None, None).unwrap();
        assert_eq!(r.distributions.len(), 2);
        assert_eq!(r.deltas, vec![[0.0; 5]]);
    }

    #[test]
    fn total_conversion_is_a_unit_delta() {
        let a = tagged(&vec![2u8; 16], 4, 4, "2009");
        let b = tagged(&vec![4u8; 16], 4, 4, "2012");
        let r = change_report(&[a, b], None, None).unwrap();
        assert_eq!(r.deltas[0][2], -1.0);
        assert_eq!(r.deltas[0][4], 1.0);
    }

    #[test]
    fn barren_expansion_fixture_reads_back_as_plus_18_percent() {
        // 10×10 maps: 18 ReforestedTree cells burn to Barren between the
        // "2012" and "2014" snapshots.
        let mut before = vec![0u8; 100];
        for (i, c) in before.iter_mut().enumerate() {
            *c = match i % 4 {
                0 => 0,
                1 => 1,
                2 => 3,
                _ => 2,
            };
        }
        let mut after = before.clone();
        let mut burned = 0;
        for c in after.iter_mut() {
            if *c == 3 && burned < 18 {
                *c = 4;
                burned += 1;
            }
        }
        assert_eq!(burned, 18);
        let maps = [tagged(&before, 10, 10, "2012"), tagged(&after, 10, 10, "2014")];
        let r = change_report(&maps, None, None).unwrap();
        assert!((r.deltas[0][4] - 0.18).abs() < 1e-9, "Barren delta {}", r.deltas[0][4]);
        assert!((r.deltas[0][3] + 0.18).abs() < 1e-9);
        assert!(r.deltas[0].iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn report_shape_and_ordering_are_validated() {
        let cells = vec![1u8; 4];
        let one = [tagged(&cells, 2, 2, "2009")];
        assert!(matches!(
            change_report(&one, None, None),
            Err(AnalysisError::BadReport { .. })
        ));
        let misordered = [tagged(&cells, 2, 2, "2012"), tagged(&cells, 2, 2, "2009")];
        assert!(matches!(
            change_report(&misordered, None, None),
            Err(AnalysisError::BadReport { .. })
        ));
        let untagged = [map_from(&cells, 2, 2), tagged(&cells, 2, 2, "2012")];
        assert!(matches!(
            change_report(&untagged, None, None),
            Err(AnalysisError::BadReport { .. })
        ));
        let mismatched = [tagged(&cells, 2, 2, "2009"), tagged(&vec![1u8; 6], 3, 2, "2012")];
        assert!(matches!(
            change_report(&mismatched, None, None),
            Err(AnalysisError::GridMismatch { .. })
        ));

        // n maps -> n distributions, n-1 delta rows.
        let maps: Vec<ClassMap> = (0..4)
            .map(|i| tagged(&cells, 2, 2, &format!("201{i}")))
            .collect();
        let r = change_report(&maps, None, None).unwrap();
        assert_eq!(r.distributions.len(), 4);
        assert_eq!(r.deltas.len(), 3);
        for d in &r.deltas {
            assert!(d.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn csv_layout_matches_the_documented_header() {
        let a = tagged(&vec![2u8; 4], 2, 2, "2009");
        let b = tagged(&[2, 2, 4, 255], 2, 2, "2012");
        let r = change_report(&[a, b], None, None).unwrap();
        let csv = report_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "year,class_name,fraction,delta_from_prev,valid_cells,nodata_cells");
        assert_eq!(lines.len(), 1 + 2 * 5);
        assert_eq!(lines[1], "2009,Conifer,0,,4,0");
        assert_eq!(lines[3], "2009,Shrub,1,,4,0");
        let shrub_2012: Vec<&str> = lines[8].split(',').collect();
        assert_eq!(shrub_2012[0], "2012");
        assert_eq!(shrub_2012[1], "Shrub");
        assert_eq!(shrub_2012[2].parse::<f64>().unwrap(), 2.0 / 3.0);
        assert_eq!(shrub_2012[3].parse::<f64>().unwrap(), 2.0 / 3.0 - 1.0);
        assert_eq!(shrub_2012[4], "3");
        assert_eq!(shrub_2012[5], "1");
        // Byte determinism.
        assert_eq!(csv, report_csv(&r));
    }
}
