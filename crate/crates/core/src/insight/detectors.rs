//! The twelve single-block detectors.
//!
//! Each returns `Ok(None)` when its threshold is not met and an error when its
//! precondition fails. Scores lie in [0, 1] so results from different kinds can be ranked.

use super::record::{
    ChartTag, DetectError, DetectorConfig, Direction, Finding, InsightKind, InsightParams, OutlierMethod, PairStat,
};
use super::stats;

type Detected = Result<Option<Finding>, DetectError>;

fn need(kind: InsightKind, values: &[f64], needed: usize) -> Result<(), DetectError> {
    if values.len() < needed {
        Err(DetectError::InsufficientData { kind, needed, found: values.len() })
    } else {
        Ok(())
    }
}

fn shares(kind: InsightKind, values: &[f64]) -> Result<Vec<f64>, DetectError> {
    if values.iter().any(|v| *v < 0.0) {
        return Err(DetectError::NegativeValues(kind));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(DetectError::ZeroSum(kind));
    }
    Ok(values.iter().map(|v| v / total).collect())
}

/// Indices sorted by value descending, ties by position.
fn order_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));
    idx
}

pub fn detect_outlier(values: &[f64], method: OutlierMethod, cfg: &DetectorConfig) -> Detected {
    match method {
        OutlierMethod::Iqr => outlier_iqr(values, cfg),
        OutlierMethod::PowerLaw => outlier_power_law(values, cfg),
    }
}

fn outlier_iqr(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::Outlier, values, 5)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = stats::quantile_sorted(&sorted, 0.25);
    let q3 = stats::quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lower, upper) = (q1 - cfg.iqr_factor * iqr, q3 + cfg.iqr_factor * iqr);
    let mut indices = Vec::new();
    let mut exceed: f64 = 0.0;
    for (i, v) in values.iter().enumerate() {
        let e = (v - upper).max(lower - v);
        if e > 0.0 {
            indices.push(i);
            exceed = exceed.max(e);
        }
    }
    if indices.is_empty() {
        return Ok(None);
    }
    let score = exceed / (exceed + cfg.iqr_factor * iqr);
    Ok(Some(Finding {
        kind: InsightKind::Outlier,
        score,
        params: InsightParams::Outlier { method: OutlierMethod::Iqr, indices, statistic: exceed, p: None },
        chart: ChartTag::Box,
    }))
}

/// Fits log(value) = a + b·log(rank) on ranks 2..n and scores the largest value by the
/// normal tail of its standardized residual.
fn outlier_power_law(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::Outlier, values, 6)?;
    if values.iter().any(|v| *v <= 0.0) {
        return Err(DetectError::NonPositive(InsightKind::Outlier));
    }
    let order = order_desc(values);
    let xs: Vec<f64> = (2..=values.len()).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = order[1..].iter().map(|i| values[*i].ln()).collect();
    let (mx, my) = (stats::mean(&xs), stats::mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let sigma = (sse / (xs.len() as f64 - 2.0)).sqrt().max(1e-6);
    let top = order[0];
    let z = (values[top].ln() - intercept) / sigma;
    if z <= cfg.power_law_z {
        return Ok(None);
    }
    let p = stats::normal_sf(z);
    Ok(Some(Finding {
        kind: InsightKind::Outlier,
        score: 1.0 - p,
        params: InsightParams::Outlier {
            method: OutlierMethod::PowerLaw,
            indices: vec![top],
            statistic: z,
            p: Some(p),
        },
        chart: ChartTag::Bar,
    }))
}

pub fn detect_dominance(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::Dominance, values, 3)?;
    let shares = shares(InsightKind::Dominance, values)?;
    let index = order_desc(&shares)[0];
    let share = shares[index];
    if share < cfg.dominance_share {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::Dominance,
        score: share,
        params: InsightParams::Dominance { index, share },
        chart: ChartTag::Pie,
    }))
}

pub fn detect_top_two(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::TopTwo, values, 3)?;
    let shares = shares(InsightKind::TopTwo, values)?;
    let order = order_desc(&shares);
    let (first, second) = (order[0], order[1]);
    if shares[second] < cfg.top_two_share {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::TopTwo,
        score: shares[second],
        params: InsightParams::TopTwo { first, second, shares: [shares[first], shares[second]] },
        chart: ChartTag::Radial,
    }))
}

pub fn detect_outstanding_negative(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::OutstandingNegative, values, 4)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]).then(a.cmp(b)));
    let index = order[0];
    let min = values[index];
    if min >= 0.0 {
        return Ok(None);
    }
    let rest: Vec<f64> = order[1..].iter().map(|i| values[*i]).collect();
    let gap = rest[0] - min;
    let sigma = stats::std_pop(&rest);
    if gap <= cfg.negative_gap_sigma * sigma {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::OutstandingNegative,
        score: gap / (gap + cfg.negative_gap_sigma * sigma),
        params: InsightParams::OutstandingNegative { index, gap, sigma },
        chart: ChartTag::Bar,
    }))
}

/// Score r²·(1 − p) of the least-squares line against position; 0 for a constant series.
pub fn trend_score(values: &[f64]) -> (f64, Option<stats::LineFit>) {
    let xs: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    match stats::ols(&xs, values) {
        Some(fit) => (fit.r2 * (1.0 - fit.p), Some(fit)),
        None => (0.0, None),
    }
}

pub fn detect_trend(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::Trend, values, 4)?;
    let (score, fit) = trend_score(values);
    let Some(fit) = fit else { return Ok(None) };
    if score < cfg.trend_min_score {
        return Ok(None);
    }
    let direction = if fit.slope >= 0.0 { Direction::Up } else { Direction::Down };
    Ok(Some(Finding {
        kind: InsightKind::Trend,
        score,
        params: InsightParams::Trend { slope: fit.slope, r2: fit.r2, p: fit.p, direction },
        chart: ChartTag::Line,
    }))
}

/// Split maximizing |t| over prefixes and suffixes of at least two values each.
/// Returns (split index, Welch test).
pub fn best_split(values: &[f64]) -> (usize, stats::WelchTest) {
    let mut best: Option<(usize, stats::WelchTest)> = None;
    for k in 2..=values.len() - 2 {
        let w = stats::welch(&values[..k], &values[k..]);
        if best.as_ref().is_none_or(|(_, b)| w.t.abs() > b.t.abs()) {
            best = Some((k, w));
        }
    }
    best.expect("at least one split for n >= 4")
}

pub fn detect_change_point(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::ChangePoint, values, 6)?;
    let (index, w) = best_split(values);
    if w.p >= cfg.alpha {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::ChangePoint,
        score: 1.0 - w.p,
        params: InsightParams::ChangePoint { index, t: w.t, p: w.p },
        chart: ChartTag::Horizon,
    }))
}

pub fn detect_evenness(values: &[f64], cfg: &DetectorConfig) -> Detected {
    if values.is_empty() {
        return Err(DetectError::InsufficientData { kind: InsightKind::Evenness, needed: 3, found: 0 });
    }
    let mu = stats::mean(values);
    if mu == 0.0 {
        return Err(DetectError::ZeroMean);
    }
    need(InsightKind::Evenness, values, 3)?;
    let cv = stats::std_pop(values) / mu.abs();
    if cv > cfg.evenness_max_cv {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::Evenness,
        score: (1.0 - cv / cfg.evenness_max_cv).clamp(0.0, 1.0),
        params: InsightParams::Evenness { cv },
        chart: ChartTag::Bar,
    }))
}

pub fn detect_skewness(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::Skewness, values, 5)?;
    let kappa1 = stats::skewness(values).ok_or(DetectError::ZeroVariance(InsightKind::Skewness))?;
    if kappa1.abs() < cfg.skewness_min {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::Skewness,
        score: kappa1.abs() / (kappa1.abs() + cfg.skewness_min),
        params: InsightParams::Skewness { kappa1 },
        chart: ChartTag::Density,
    }))
}

pub fn detect_kurtosis(values: &[f64], cfg: &DetectorConfig) -> Detected {
    need(InsightKind::Kurtosis, values, 5)?;
    let kappa2 = stats::kurtosis(values).ok_or(DetectError::ZeroVariance(InsightKind::Kurtosis))?;
    if kappa2 < cfg.kurtosis_min {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::Kurtosis,
        score: kappa2 / (kappa2 + cfg.kurtosis_min),
        params: InsightParams::Kurtosis { kappa2 },
        chart: ChartTag::Density,
    }))
}

fn check_matrix(kind: InsightKind, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), DetectError> {
    if m.len() < rows || m.iter().any(|r| r.len() < cols) {
        return Err(DetectError::MatrixTooSmall { kind, rows, cols });
    }
    if m.iter().any(|r| r.len() != m[0].len()) {
        return Err(DetectError::ShapeMismatch);
    }
    Ok(())
}

pub fn detect_dependence(m: &[Vec<f64>], cfg: &DetectorConfig) -> Detected {
    check_matrix(InsightKind::Dependence, m, 2, 2)?;
    if m.iter().flatten().any(|v| *v < 0.0) {
        return Err(DetectError::NegativeValues(InsightKind::Dependence));
    }
    let total: f64 = m.iter().flatten().sum();
    if total <= 0.0 {
        return Err(DetectError::ZeroSum(InsightKind::Dependence));
    }
    let row_sums: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).sum()).collect();
    let min_expected =
        row_sums.iter().flat_map(|r| col_sums.iter().map(move |c| r * c / total)).fold(f64::INFINITY, f64::min);
    if min_expected < cfg.min_expected_count {
        return Err(DetectError::ExpectedCountTooSmall { expected: min_expected });
    }
    let (statistic, dof, p) = stats::chi_square(m);
    if p >= cfg.alpha {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::Dependence,
        score: 1.0 - p,
        params: InsightParams::Dependence { statistic, dof, p },
        chart: ChartTag::StackedBarNormalized,
    }))
}

/// Pairwise Pearson tests between rows. Pairs involving a constant row are excluded.
pub fn correlation_pairs(m: &[Vec<f64>]) -> Vec<PairStat> {
    let mut pairs = Vec::new();
    for a in 0..m.len() {
        for b in a + 1..m.len() {
            if let Some(rho) = stats::pearson(&m[a], &m[b]) {
                pairs.push(PairStat { a, b, rho, p: stats::correlation_p(rho, m[a].len()) });
            }
        }
    }
    pairs
}

pub fn detect_correlation(m: &[Vec<f64>], cfg: &DetectorConfig) -> Detected {
    check_matrix(InsightKind::Correlation, m, 2, 4)?;
    let pairs = correlation_pairs(m);
    if pairs.is_empty() {
        return Ok(None);
    }
    let significant = pairs.iter().filter(|p| p.p < cfg.alpha).count();
    let fraction = significant as f64 / pairs.len() as f64;
    if fraction <= 0.5 {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::Correlation,
        score: fraction,
        params: InsightParams::Correlation { pairs, significant_fraction: fraction },
        chart: ChartTag::MultiLine,
    }))
}

pub fn detect_cross_measure(x: &[f64], y: &[f64], cfg: &DetectorConfig) -> Detected {
    if x.len() != y.len() {
        return Err(DetectError::LengthMismatch(x.len(), y.len()));
    }
    need(InsightKind::CrossMeasure, x, 4)?;
    let rho = stats::pearson(x, y).ok_or(DetectError::ZeroVariance(InsightKind::CrossMeasure))?;
    if rho.abs() < cfg.cross_measure_min {
        return Ok(None);
    }
    Ok(Some(Finding {
        kind: InsightKind::CrossMeasure,
        score: rho.abs(),
        params: InsightParams::CrossMeasure { rho },
        chart: ChartTag::Scatter,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    fn fired(r: Detected) -> Finding {
        r.unwrap().expect("detector should fire")
    }

    #[test]
    fn iqr_outlier() {
        let f = fired(detect_outlier(&[1., 2., 3., 4., 5., 6., 7., 8., 100.], OutlierMethod::Iqr, &cfg()));
        assert_eq!(
            f.params,
            InsightParams::Outlier { method: OutlierMethod::Iqr, indices: vec![8], statistic: 81.0, p: None }
        );
        assert_eq!(f.chart, ChartTag::Box);
        assert_eq!(detect_outlier(&[1., 2., 3., 4., 5.], OutlierMethod::Iqr, &cfg()), Ok(None));
        assert!(detect_outlier(&[1., 2.], OutlierMethod::Iqr, &cfg()).is_err());
    }

    #[test]
    fn power_law_spike() {
        let mut xs: Vec<f64> = (1..=12).map(|r| 1000.0 / (r as f64).powf(1.2)).collect();
        xs.swap(0, 7);
        xs[7] *= 10.0;
        let f = fired(detect_outlier(&xs, OutlierMethod::PowerLaw, &cfg()));
        match f.params {
            InsightParams::Outlier { indices, .. } => assert_eq!(indices, vec![7]),
            other => panic!("{other:?}"),
        }
        let clean: Vec<f64> = (1..=12).map(|r| 1000.0 / (r as f64).powf(1.2)).collect();
        assert_eq!(detect_outlier(&clean, OutlierMethod::PowerLaw, &cfg()), Ok(None));
    }

    #[test]
    fn dominance_and_top_two_boundaries() {
        let f = fired(detect_dominance(&[60., 20., 20.], &cfg()));
        assert_eq!(f.params, InsightParams::Dominance { index: 0, share: 0.6 });
        assert_eq!(detect_dominance(&[34., 33., 33.], &cfg()), Ok(None));
        assert!(detect_dominance(&[50., 25., 25.], &cfg()).unwrap().is_some());
        assert_eq!(detect_dominance(&[1., -1., 3.], &cfg()), Err(DetectError::NegativeValues(InsightKind::Dominance)));
        assert_eq!(detect_dominance(&[0., 0., 0.], &cfg()), Err(DetectError::ZeroSum(InsightKind::Dominance)));

        assert!(detect_top_two(&[40., 40., 20.], &cfg()).unwrap().is_some());
        assert_eq!(detect_top_two(&[50., 30., 20.], &cfg()), Ok(None));
        assert!(detect_top_two(&[34., 34., 32.], &cfg()).unwrap().is_some());
    }

    #[test]
    fn outstanding_negative() {
        let f = fired(detect_outstanding_negative(&[5., 4., 6., -20.], &cfg()));
        let sigma = (2.0f64 / 3.0).sqrt();
        assert_eq!(f.params, InsightParams::OutstandingNegative { index: 3, gap: 24.0, sigma });
        assert_eq!(detect_outstanding_negative(&[5., 4., 6., 3.], &cfg()), Ok(None));
        assert_eq!(detect_outstanding_negative(&[-1., -1.1, -0.9, -1.05], &cfg()), Ok(None));
    }

    #[test]
    fn trend_cases() {
        let up = fired(detect_trend(&[1., 2., 3., 4., 5.], &cfg()));
        assert!((up.score - 1.0).abs() < 1e-12);
        assert!(matches!(up.params, InsightParams::Trend { direction: Direction::Up, .. }));
        let down = fired(detect_trend(&[5., 4., 3., 2., 1.], &cfg()));
        assert!(matches!(down.params, InsightParams::Trend { direction: Direction::Down, .. }));
        assert_eq!(detect_trend(&[3., 3., 3., 3.], &cfg()), Ok(None));
        assert_eq!(trend_score(&[3., 3., 3., 3.]).0, 0.0);
    }

    #[test]
    fn change_point_cases() {
        let f = fired(detect_change_point(&[1., 1., 1., 10., 10., 10.], &cfg()));
        assert!(matches!(f.params, InsightParams::ChangePoint { index: 3, .. }));
        assert_eq!(detect_change_point(&[1., 2., 1., 2., 1., 2.], &cfg()), Ok(None));
    }

    #[test]
    fn evenness_cases() {
        let f = fired(detect_evenness(&[5., 5., 5., 5.], &cfg()));
        assert_eq!(f.score, 1.0);
        assert_eq!(detect_evenness(&[1., 10., 1., 10.], &cfg()), Ok(None));
        assert_eq!(detect_evenness(&[-1., 1.], &cfg()), Err(DetectError::ZeroMean));
    }

    #[test]
    fn shape_moments() {
        let f = fired(detect_skewness(&[1., 1., 1., 1., 1., 1., 1., 1., 1., 50.], &cfg()));
        assert!(matches!(f.params, InsightParams::Skewness { kappa1 } if kappa1 > 2.0));
        assert_eq!(detect_skewness(&[1., 1., 1., 1., 50.], &cfg()), Ok(None));
        let spike: Vec<f64> = std::iter::repeat_n(0.0, 20).chain([100.0]).collect();
        assert!(detect_kurtosis(&spike, &cfg()).unwrap().is_some());
        assert!(detect_kurtosis(&[2., 2., 2., 2., 2.], &cfg()).is_err());
    }

    #[test]
    fn dependence_cases() {
        let m = |rows: &[[f64; 2]]| rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        assert_eq!(detect_dependence(&m(&[[10., 10.], [10., 10.]]), &cfg()), Ok(None));
        let f = fired(detect_dependence(&m(&[[20., 0.], [0., 20.]]), &cfg()));
        assert!(matches!(f.params, InsightParams::Dependence { statistic, p, .. } if statistic == 40.0 && p < 1e-6));
        assert!(matches!(
            detect_dependence(&m(&[[4., 4.], [4., 4.]]), &cfg()),
            Err(DetectError::ExpectedCountTooSmall { .. })
        ));
    }

    #[test]
    fn correlation_cases() {
        let f = fired(detect_correlation(&[vec![1., 2., 3., 4.], vec![2., 4., 6., 8.]], &cfg()));
        assert!(matches!(&f.params, InsightParams::Correlation { pairs, .. } if (pairs[0].rho - 1.0).abs() < 1e-12));
        assert_eq!(detect_correlation(&[vec![1., 2., 3., 4.], vec![4., 1., 3., 2.]], &cfg()), Ok(None));
        assert_eq!(detect_correlation(&[vec![1., 2., 3., 4.], vec![5., 5., 5., 5.]], &cfg()), Ok(None));
    }

    #[test]
    fn cross_measure_cases() {
        let x = [1., 2., 3., 4.];
        let f = fired(detect_cross_measure(&x, &[2., 4., 6., 8.], &cfg()));
        assert!((f.score - 1.0).abs() < 1e-12);
        let neg = fired(detect_cross_measure(&x, &[4., 1., -2., -5.], &cfg()));
        assert!(matches!(neg.params, InsightParams::CrossMeasure { rho } if (rho + 1.0).abs() < 1e-12));
        // Σdxdy = -2, Σdx² = 5, Σdy² = 4
        let r = detect_cross_measure(&x, &[1., -1., 1., -1.], &cfg()).unwrap();
        assert_eq!(r, None);
        assert!((stats::pearson(&x, &[1., -1., 1., -1.]).unwrap() + 2.0 / 20f64.sqrt()).abs() < 1e-12);
    }
}
