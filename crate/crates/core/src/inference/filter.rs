//! 3×3 modal smoothing of class maps.

use super::ClassMap;
use crate::dataset::{NODATA_CLASS, N_CLASSES};

/// Replaces every cell with the modal class of its 3×3 neighborhood (center
/// included), counting only in-bounds, non-nodata neighbors; ties break
/// toward the lowest class id. Nodata centers are left untouched. The filter
/// reads only the input map, so it is a single simultaneous pass rather than
/// an in-place sweep.
pub fn majority_filter(map: &ClassMap) -> ClassMap {
    let (w, h) = (map.width_tiles(), map.height_tiles());
    let mut out = map.cells().to_vec();
    for row in 0..h {
        for col in 0..w {
            if map.cell(col, row) == NODATA_CLASS {
                continue;
            }
            let mut votes = [0u32; N_CLASSES];
            for nr in row.saturating_sub(1)..=(row + 1).min(h - 1) {
                for nc in col.saturating_sub(1)..=(col + 1).min(w - 1) {
                    let c = map.cell(nc, nr);
                    if c != NODATA_CLASS {
                        votes[c as usize] += 1;
                    }
                }
            }
            let mut best = 0usize;
            for k in 1..N_CLASSES {
                if votes[k] > votes[best] {
                    best = k;
                }
            }
            out[row * w + col] = best as u8;
        }
    }
    ClassMap::new(w, h, out, map.geo, map.year_tag.clone())
        .expect("filtered map keeps the input's valid dimensions and alphabet")
}

#[cfg(test)]
mod tests {
    use super::super::test_support::map_from;
    use super::*;

    #[test]
    fn constant_maps_are_fixed_points() {
        for class in 0..5u8 {
            let m = map_from(&vec![class; 20], 5, 4);
            assert_eq!(majority_filter(&m), m);
        }
    }

    #[test]
    fn isolated_speckle_is_overwritten_by_its_neighborhood() {
        let mut cells = vec![2u8; 9];
        cells[4] = 4; // lone class-4 cell surrounded by class 2
        let m = map_from(&cells, 3, 3);
        assert_eq!(majority_filter(&m).cell(1, 1), 2);
    }

    #[test]
    fn ties_break_toward_the_lowest_class_id() {
        // Center's neighborhood: four 1s, four 3s, center 3 -> 3 has 5 votes.
        let m = map_from(&[1, 3, 1, 3, 3, 1, 1, 3, 3], 3, 3);
        assert_eq!(majority_filter(&m).cell(1, 1), 3);
        // Same corners but center 1 -> 1 wins 5 to 4.
        let m = map_from(&[1, 3, 1, 3, 1, 1, 1, 3, 3], 3, 3);
        assert_eq!(majority_filter(&m).cell(1, 1), 1);
        // Dead even four-vs-four around a nodata-free grid: 2x2 block where
        // every neighborhood is {two 0s, two 4s} -> lowest id 0 wins.
        let m = map_from(&[4, 0, 0, 4], 2, 2);
        let f = majority_filter(&m);
        assert_eq!(f.cells(), &[0, 0, 0, 0]);
    }

    #[test]
    fn nodata_cells_stay_nodata_and_cast_no_votes() {
        let m = map_from(&[255, 1, 1, 1, 255, 1, 1, 1, 255], 3, 3);
        let f = majority_filter(&m);
        assert_eq!(f.cell(0, 0), 255);
        assert_eq!(f.cell(1, 1), 255);
        assert_eq!(f.cell(2, 2), 255);
        assert_eq!(f.cell(1, 0), 1);
        // A cell whose only non-nodata neighbor is itself keeps its class.
        let m = map_from(&[3, 255, 255, 255], 2, 2);
        assert_eq!(majority_filter(&m).cell(0, 0), 3);
    }

    #[test]
    fn borders_clip_the_window_instead_of_wrapping() {
        // Top-left corner sees only the 2x2 in-bounds block.
        let m = map_from(&[0, 1, 1, 1, 1, 1, 1, 1, 0], 3, 3);
        let f = majority_filter(&m);
        assert_eq!(f.cell(0, 0), 1, "corner outvoted 3 to 1");
        assert_eq!(f.cell(2, 2), 1);
    }

    #[test]
    fn single_pass_semantics_use_original_neighbors_only() {
        // Row [1,0,1,1]: cell 0 ties {1,0} and flips to 0. An in-place sweep
        // would then score cell 1 against the updated 0 and leave it at 0; a
        // simultaneous pass scores it against the original {1,0,1} and flips
        // it to 1.
        let m = map_from(&[1, 0, 1, 1], 4, 1);
        assert_eq!(majority_filter(&m).cells(), &[0, 1, 1, 1]);
    }

    #[test]
    fn output_alphabet_is_a_subset_of_the_input_alphabet() {
        let cells: Vec<u8> = (0..36).map(|i| if i % 7 == 0 { 255 } else { (i % 3) as u8 }).collect();
        let m = map_from(&cells, 6, 6);
        let f = majority_filter(&m);
        assert!(f.cells().iter().all(|&c| c <= 2 || c == 255));
    }
}
