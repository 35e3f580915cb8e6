//! Quantitative outputs over class maps: per-class area distributions,
//! multi-year change reports, and a grouped-bar SVG rendering.

mod chart;
mod report;

pub use chart::{render_bars, CHART_HEIGHT, SVG_HEIGHT, SVG_WIDTH};
pub use report::{area_distribution, change_report, report_csv, AreaDistribution, ChangeReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("maps are not co-registered: {detail}")]
    GridMismatch { detail: String },
    #[error("cannot build report: {detail}")]
    BadReport { detail: String },
}
