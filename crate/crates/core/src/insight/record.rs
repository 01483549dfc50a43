use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Block, RecordId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsightKind {
    Outlier,
    Dominance,
    TopTwo,
    OutstandingNegative,
    Trend,
    ChangePoint,
    Evenness,
    Skewness,
    Kurtosis,
    Dependence,
    Correlation,
    CrossMeasure,
}

impl InsightKind {
    pub const COUNT: usize = 12;

    pub const ALL: [InsightKind; 12] = [
        InsightKind::Outlier,
        InsightKind::Dominance,
        InsightKind::TopTwo,
        InsightKind::OutstandingNegative,
        InsightKind::Trend,
        InsightKind::ChangePoint,
        InsightKind::Evenness,
        InsightKind::Skewness,
        InsightKind::Kurtosis,
        InsightKind::Dependence,
        InsightKind::Correlation,
        InsightKind::CrossMeasure,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            InsightKind::Outlier => "outlier",
            InsightKind::Dominance => "dominance",
            InsightKind::TopTwo => "top_two",
            InsightKind::OutstandingNegative => "outstanding_negative",
            InsightKind::Trend => "trend",
            InsightKind::ChangePoint => "change_point",
            InsightKind::Evenness => "evenness",
            InsightKind::Skewness => "skewness",
            InsightKind::Kurtosis => "kurtosis",
            InsightKind::Dependence => "dependence",
            InsightKind::Correlation => "correlation",
            InsightKind::CrossMeasure => "cross_measure",
        }
    }

    /// Chart tags a record of this kind may carry.
    pub fn allowed_charts(self) -> &'static [ChartTag] {
        use ChartTag::*;
        match self {
            InsightKind::Outlier => &[Box, Bar],
            InsightKind::Dominance | InsightKind::TopTwo => &[Pie, Radial],
            InsightKind::OutstandingNegative | InsightKind::Evenness => &[Bar],
            InsightKind::Trend | InsightKind::ChangePoint => &[Line, Horizon],
            InsightKind::Skewness | InsightKind::Kurtosis => &[Density],
            InsightKind::Dependence => &[StackedBarNormalized],
            InsightKind::Correlation => &[MultiLine],
            InsightKind::CrossMeasure => &[Scatter],
        }
    }
}

impl fmt::Display for InsightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InsightKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InsightKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| format!("unknown insight kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartTag {
    Box,
    Bar,
    Pie,
    Radial,
    Line,
    Horizon,
    Density,
    StackedBarNormalized,
    MultiLine,
    Scatter,
}

impl ChartTag {
    pub const ALL: [ChartTag; 10] = [
        ChartTag::Box,
        ChartTag::Bar,
        ChartTag::Pie,
        ChartTag::Radial,
        ChartTag::Line,
        ChartTag::Horizon,
        ChartTag::Density,
        ChartTag::StackedBarNormalized,
        ChartTag::MultiLine,
        ChartTag::Scatter,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Agent,
    Manual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMethod {
    Iqr,
    PowerLaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairStat {
    pub a: usize,
    pub b: usize,
    pub rho: f64,
    pub p: f64,
}

/// Detector-specific payload. Indices are row-major positions inside the block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum InsightParams {
    Outlier { method: OutlierMethod, indices: Vec<usize>, statistic: f64, p: Option<f64> },
    Dominance { index: usize, share: f64 },
    TopTwo { first: usize, second: usize, shares: [f64; 2] },
    OutstandingNegative { index: usize, gap: f64, sigma: f64 },
    Trend { slope: f64, r2: f64, p: f64, direction: Direction },
    ChangePoint { index: usize, t: f64, p: f64 },
    Evenness { cv: f64 },
    Skewness { kappa1: f64 },
    Kurtosis { kappa2: f64 },
    Dependence { statistic: f64, dof: f64, p: f64 },
    Correlation { pairs: Vec<PairStat>, significant_fraction: f64 },
    CrossMeasure { rho: f64 },
}

impl InsightParams {
    pub(crate) fn remap_indices(&mut self, map: &[usize]) {
        match self {
            InsightParams::Outlier { indices, .. } => indices.iter_mut().for_each(|i| *i = map[*i]),
            InsightParams::Dominance { index, .. }
            | InsightParams::OutstandingNegative { index, .. }
            | InsightParams::ChangePoint { index, .. } => *index = map[*index],
            InsightParams::TopTwo { first, second, .. } => {
                *first = map[*first];
                *second = map[*second];
            }
            _ => {}
        }
    }
}

/// A detector that fired, before it is attached to a block and ledger id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: InsightKind,
    pub score: f64,
    pub params: InsightParams,
    pub chart: ChartTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InsightRecord {
    pub id: RecordId,
    pub kind: InsightKind,
    pub block: Block,
    pub score: f64,
    pub params: InsightParams,
    pub chart: ChartTag,
    pub provenance: Provenance,
}

impl InsightRecord {
    pub fn new(id: RecordId, block: Block, finding: Finding, provenance: Provenance) -> Self {
        InsightRecord {
            id,
            kind: finding.kind,
            block,
            score: finding.score,
            params: finding.params,
            chart: finding.chart,
            provenance,
        }
    }

    pub fn finding(&self) -> Finding {
        Finding { kind: self.kind, score: self.score, params: self.params.clone(), chart: self.chart }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("{kind} needs at least {needed} values, got {found}")]
    InsufficientData { kind: InsightKind, needed: usize, found: usize },
    #[error("{0} requires non-negative values")]
    NegativeValues(InsightKind),
    #[error("{0} requires a positive sum")]
    ZeroSum(InsightKind),
    #[error("coefficient of variation is undefined for zero mean")]
    ZeroMean,
    #[error("{0} requires non-zero variance")]
    ZeroVariance(InsightKind),
    #[error("{0} requires positive values")]
    NonPositive(InsightKind),
    #[error("expected count {expected} is below 5")]
    ExpectedCountTooSmall { expected: f64 },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{kind} needs a matrix of at least {rows}x{cols}")]
    MatrixTooSmall { kind: InsightKind, rows: usize, cols: usize },
    #[error("related blocks have different shapes")]
    ShapeMismatch,
    #[error("at least two related blocks are required")]
    TooFewBlocks,
}

/// Thresholds for every detector. Defaults follow the published taxonomy where it
/// fixes a number (50 %, 34 %, p < 0.05); the rest are tunable choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case", deny_unknown_fields)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub iqr_factor: f64,
    pub power_law_z: f64,
    pub dominance_share: f64,
    pub top_two_share: f64,
    pub negative_gap_sigma: f64,
    pub trend_min_score: f64,
    pub evenness_max_cv: f64,
    pub skewness_min: f64,
    pub kurtosis_min: f64,
    pub cross_measure_min: f64,
    pub min_expected_count: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 0.05,
            iqr_factor: 3.0,
            power_law_z: 3.0,
            dominance_share: 0.5,
            top_two_share: 0.34,
            negative_gap_sigma: 3.0,
            trend_min_score: 0.7,
            evenness_max_cv: 0.1,
            skewness_min: 2.0,
            kurtosis_min: 6.0,
            cross_measure_min: 0.8,
            min_expected_count: 5.0,
        }
    }
}
