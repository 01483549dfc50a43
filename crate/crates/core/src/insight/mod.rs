//! Insight detection over table blocks.
//!
//! Single-block detectors live in [`detectors`]; [`detect_all`] dispatches them on a
//! block and ranks the results. Multi-block relations and their shared/differing
//! patterns are in [`multi`].

pub mod detectors;
pub mod multi;
mod record;
pub mod stats;

pub use detectors::{
    detect_change_point, detect_correlation, detect_cross_measure, detect_dependence, detect_dominance,
    detect_evenness, detect_kurtosis, detect_outlier, detect_outstanding_negative, detect_skewness, detect_top_two,
    detect_trend,
};
pub use multi::{compose_multiblock, recommend_blocks, BlockRelation, Mechanism, MultiBlockInsight, MultiPattern};
pub use record::{
    ChartTag, DetectError, DetectorConfig, Direction, Finding, InsightKind, InsightParams, InsightRecord,
    OutlierMethod, PairStat, Provenance,
};

use crate::table::{block_values, Block, TableError, TableState};

/// Runs every applicable detector on a block and returns the fired ones, best first.
///
/// Order-free detectors see the block's present values in row-major order. Trend and
/// change point need a complete single row or column. The matrix detectors need a
/// complete block with at least two rows and two columns.
pub fn detect_all(state: &TableState, block: &Block, cfg: &DetectorConfig) -> Result<Vec<Finding>, TableError> {
    let matrix = block_values(state, block)?;
    Ok(detect_matrix(&matrix, cfg))
}

pub fn detect_matrix(matrix: &[Vec<Option<f64>>], cfg: &DetectorConfig) -> Vec<Finding> {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    let mut positions = Vec::new();
    let mut present = Vec::new();
    for (i, v) in matrix.iter().flatten().enumerate() {
        if let Some(v) = v {
            positions.push(i);
            present.push(*v);
        }
    }
    let complete = present.len() == rows * cols;
    let mut found: Vec<Finding> = Vec::new();
    let mut keep = |r: Result<Option<Finding>, DetectError>, remap: bool| {
        if let Ok(Some(mut f)) = r {
            if remap {
                f.params.remap_indices(&positions);
            }
            found.push(f);
        }
    };

    match detect_outlier(&present, OutlierMethod::Iqr, cfg) {
        Ok(Some(f)) => keep(Ok(Some(f)), true),
        _ => keep(detect_outlier(&present, OutlierMethod::PowerLaw, cfg), true),
    }
    keep(detect_dominance(&present, cfg), true);
    keep(detect_top_two(&present, cfg), true);
    keep(detect_outstanding_negative(&present, cfg), true);
    keep(detect_evenness(&present, cfg), false);
    keep(detect_skewness(&present, cfg), false);
    keep(detect_kurtosis(&present, cfg), false);

    if complete && (rows == 1 || cols == 1) {
        let trend = detect_trend(&present, cfg);
        let suppress = matches!(&trend, Ok(Some(f)) if f.score >= cfg.trend_min_score);
        keep(trend, false);
        if !suppress {
            keep(detect_change_point(&present, cfg), false);
        }
    }

    if complete && rows >= 2 && cols >= 2 {
        let m: Vec<Vec<f64>> = matrix.iter().map(|r| r.iter().map(|v| v.unwrap()).collect()).collect();
        keep(detect_dependence(&m, cfg), false);
        keep(detect_correlation(&m, cfg), false);
        if rows == 2 {
            keep(detect_cross_measure(&m[0], &m[1], cfg), false);
        } else if cols == 2 {
            let x: Vec<f64> = m.iter().map(|r| r[0]).collect();
            let y: Vec<f64> = m.iter().map(|r| r[1]).collect();
            keep(detect_cross_measure(&x, &y, cfg), false);
        }
    }

    found.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.kind.cmp(&b.kind)));
    found
}
