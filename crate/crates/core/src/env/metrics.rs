use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::insight::{InsightKind, InsightRecord};
use crate::table::TableState;

/// Coverage (AR), discovery (IR) and evenness (ER) of the embedded insights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub ar: f64,
    pub ir: f64,
    pub er: f64,
    pub covered_cells: usize,
    pub total_cells: usize,
    pub discovered_kinds: usize,
    pub total_kinds: usize,
    pub coverage_by_kind: BTreeMap<InsightKind, usize>,
}

impl Metrics {
    pub fn zero(total_cells: usize) -> Self {
        Metrics { total_cells, total_kinds: InsightKind::COUNT, ..Metrics::default() }
    }
}

/// Recomputes metrics from the ledger alone. `A_d` counts every grid cell.
pub fn compute_metrics(state: &TableState, ledger: &[InsightRecord]) -> Metrics {
    let mut m = Metrics::zero(state.grid().len());
    for record in ledger {
        let cells = record.block.cell_count();
        m.covered_cells += cells;
        *m.coverage_by_kind.entry(record.kind).or_default() += cells;
    }
    m.discovered_kinds = m.coverage_by_kind.len();
    if m.total_cells > 0 {
        m.ar = m.covered_cells as f64 / m.total_cells as f64;
    }
    m.ir = m.discovered_kinds as f64 / m.total_kinds as f64;
    m.er = entropy(m.coverage_by_kind.values().copied(), m.covered_cells);
    m
}

/// Shannon entropy (nats) of per-kind cell shares.
pub fn entropy(counts: impl Iterator<Item = usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    -counts
        .filter(|c| *c > 0)
        .map(|c| {
            let p = c as f64 / total as f64;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Σ γᵏ r_k, evaluated by backward recursion.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discounting() {
        assert_eq!(discounted_return(&[1.0, 5.0, 5.0], 0.0), 1.0);
        assert_eq!(discounted_return(&[1.0, 2.0, 3.0], 1.0), 6.0);
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5), 1.75);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    #[test]
    fn entropy_of_even_split() {
        assert!((entropy([8, 8].into_iter(), 16) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(entropy([4].into_iter(), 4), 0.0);
        assert_eq!(entropy(std::iter::empty(), 0), 0.0);
    }
}
