//! Grouped-bar SVG rendering of a change report (one group per year, five
//! bars per group). Output is plain deterministic text on a fixed 800×400
//! canvas.

use super::report::ChangeReport;
use crate::dataset::{CLASS_NAMES, N_CLASSES};
use crate::inference::DEFAULT_PALETTE;

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 400.0;
/// Pixel height of a fraction of 1.0.
pub const CHART_HEIGHT: f64 = 330.0;

const PLOT_LEFT: f64 = 60.0;
const PLOT_WIDTH: f64 = 570.0;
const BASELINE: f64 = 350.0;
const LEGEND_X: f64 = 650.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Renders the report as a grouped bar chart. Bars carry `class="bar"` and
/// heights proportional to their fractions (`fraction × 330`, rounded to
/// 0.01); identical reports render byte-identically.
pub fn render_bars(report: &ChangeReport) -> String {
    let n = report.distributions.len().max(1);
    let group_w = PLOT_WIDTH / n as f64;
    let bar_w = group_w / (N_CLASSES as f64 + 2.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>\n"
    ));
    // Horizontal gridlines and tick labels every 0.25.
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let y = BASELINE - frac * CHART_HEIGHT;
        svg.push_str(&format!(
            "  <line x1=\"{PLOT_LEFT}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\"/>\n",
            PLOT_LEFT + PLOT_WIDTH
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{frac:.2}</text>\n",
            PLOT_LEFT - 6.0,
            y + 4.0
        ));
    }
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{PLOT_LEFT}\" y1=\"{:.2}\" x2=\"{PLOT_LEFT}\" y2=\"{BASELINE}\" \
         stroke=\"black\"/>\n",
        BASELINE - CHART_HEIGHT
    ));
    svg.push_str(&format!(
        "  <line x1=\"{PLOT_LEFT}\" y1=\"{BASELINE}\" x2=\"{:.2}\" y2=\"{BASELINE}\" \
         stroke=\"black\"/>\n",
        PLOT_LEFT + PLOT_WIDTH
    ));
    // Bars and year labels.
    for (g, dist) in report.distributions.iter().enumerate() {
        let group_x = PLOT_LEFT + g as f64 * group_w;
        for (k, &frac) in dist.fractions.iter().enumerate() {
            let h = frac * CHART_HEIGHT;
            let x = group_x + bar_w * (1.0 + k as f64);
            svg.push_str(&format!(
                "  <rect class=\"bar\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{bar_w:.2}\" \
                 height=\"{h:.2}\" fill=\"{}\"/>\n",
                BASELINE - h,
                hex(DEFAULT_PALETTE[k])
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            group_x + group_w / 2.0,
            BASELINE + 18.0,
            esc(&dist.year_tag)
        ));
    }
    // Legend.
    for (k, name) in CLASS_NAMES.iter().enumerate() {
        let y = 40.0 + 22.0 * k as f64;
        svg.push_str(&format!(
            "  <rect x=\"{LEGEND_X}\" y=\"{y:.2}\" width=\"14\" height=\"14\" fill=\"{}\"/>\n",
            hex(DEFAULT_PALETTE[k])
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\">{name}</text>\n",
            LEGEND_X + 20.0,
            y + 12.0
        ));
    }
    if let Some(mask) = &report.mask_ref {
        svg.push_str(&format!(
            "  <text x=\"{LEGEND_X}\" y=\"{:.2}\">mask: {}</text>\n",
            40.0 + 22.0 * N_CLASSES as f64 + 12.0,
            esc(mask)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::super::report::{change_report, AreaDistribution};
    use super::*;
    use crate::inference::test_support::map_from;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bar_heights(svg: &str) -> Vec<f64> {
        svg.split("<rect")
            .filter(|frag| frag.contains("class=\"bar\""))
            .map(|frag| {
                let at = frag.find("height=\"").unwrap() + 8;
                frag[at..].split('"').next().unwrap().parse().unwrap()
            })
            .collect()
    }

    fn single_year(fractions: [f64; 5]) -> ChangeReport {
        ChangeReport {
            distributions: vec![AreaDistribution {
                year_tag: "2009".into(),
                fractions,
                valid_cells: 100,
                nodata_cells: 0,
                cell_area: 19.2 * 19.2,
            }],
            deltas: vec![],
            mask_ref: None,
        }
    }

    #[test]
    fn all_conifer_yields_one_full_height_bar() {
        let svg = render_bars(&single_year([1.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(bar_heights(&svg), vec![330.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn identical_reports_render_byte_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cells: Vec<u8> = (0..64).map(|_| rng.random_range(0..5u8)).collect();
        let mut a = map_from(&cells, 8, 8);
        a.year_tag = Some("2009".into());
        let mut b = map_from(&cells, 8, 8);
        b.year_tag = Some("2012".into());
        let r = change_report(&[a, b], None, Some("fire.geojson".into())).unwrap();
        assert_eq!(render_bars(&r), render_bars(&r));
        assert!(render_bars(&r).contains("mask: fire.geojson"));
    }

    #[test]
    fn bar_heights_are_proportional_to_fractions_within_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let maps: Vec<_> = (0..3)
            .map(|i| {
                let cells: Vec<u8> = (0..400).map(|_| rng.random_range(0..5u8)).collect();
                let mut m = map_from(&cells, 20, 20);
                m.year_tag = Some(format!("201{i}"));
                m
            })
            .collect();
        let r = change_report(&maps, None, None).unwrap();
        let heights = bar_heights(&render_bars(&r));
        assert_eq!(heights.len(), 3 * 5);
        for (i, h) in heights.iter().enumerate() {
            let frac = r.distributions[i / 5].fractions[i % 5];
            assert!(
                (h - frac * CHART_HEIGHT).abs() <= 0.005 + 1e-12,
                "bar {i}: height {h} vs fraction {frac}"
            );
        }
    }

    #[test]
    fn chart_structure_names_every_class_and_year() {
        let svg = render_bars(&single_year([0.2, 0.2, 0.2, 0.2, 0.2]));
        for name in CLASS_NAMES {
            assert!(svg.contains(name));
        }
        assert!(svg.contains(">2009<"));
        assert!(svg.contains("width=\"800\""));
        assert!(svg.contains("height=\"400\""));
    }
}
