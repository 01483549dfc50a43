//! Shared test support: random balanced tables and brute-force reference statistics.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use tabsight_core::table::{NodeSpec, TableDocument};
use tabsight_core::TableState;

const LABELS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn subtree(rng: &mut impl Rng, level: usize, depth: usize, budget: usize) -> (Vec<NodeSpec>, usize) {
    let k = rng.gen_range(1..=budget.min(if level + 1 == depth { 4 } else { 3 }));
    let mut labels = LABELS.to_vec();
    labels.shuffle(rng);
    let mut children = Vec::with_capacity(k);
    let mut used = 0;
    for (i, label) in labels.iter().take(k).enumerate() {
        if level + 1 == depth {
            children.push(NodeSpec::leaf(*label));
            used += 1;
        } else {
            let room = budget - used - (k - i - 1);
            let (grand, n) = subtree(rng, level + 1, depth, room);
            children.push(NodeSpec::branch(*label, grand));
            used += n;
        }
    }
    (children, used)
}

/// Balanced heading tree of depth 1..=max_depth with at most `max_leaves` leaves. Labels
/// come from a small shared pool, so non-cross-product shapes are common.
pub fn random_tree(rng: &mut impl Rng, root: &str, max_depth: usize, max_leaves: usize) -> (NodeSpec, usize) {
    let depth = rng.gen_range(1..=max_depth);
    let (children, leaves) = subtree(rng, 0, depth, max_leaves);
    (NodeSpec::branch(root, children), leaves)
}

pub fn random_document(rng: &mut impl Rng, max_depth: usize, max_leaves: usize) -> TableDocument {
    let (row_tree, rows) = random_tree(rng, "R", max_depth, max_leaves);
    let (col_tree, cols) = random_tree(rng, "C", max_depth, max_leaves);
    let values = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| match rng.gen_range(0..10) {
                    0 => None,
                    1..=5 => Some(rng.gen_range(0..40) as f64),
                    _ => Some((rng.gen::<f64>() * 200.0 - 20.0).round() / 4.0),
                })
                .collect()
        })
        .collect();
    TableDocument { row_tree, col_tree, values }
}

pub fn random_table(rng: &mut impl Rng, max_depth: usize, max_leaves: usize) -> TableState {
    TableState::from_document(&random_document(rng, max_depth, max_leaves)).expect("generated documents are valid")
}

pub fn planted() -> TableState {
    load("planted.json")
}

pub fn load(name: &str) -> TableState {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name);
    tabsight_core::parse_table(&std::fs::read(&path).expect("data file")).expect("valid table")
}

/// |a − b| ≤ tol·max(1, |b|).
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

// Reference statistics. Sums are accumulated in a different order from the library
// (raw power sums, explicit normal equations) and tail probabilities come from statrs.

pub fn ref_mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs.iter().rev() {
        s += x;
    }
    s / xs.len() as f64
}

pub fn ref_moment(xs: &[f64], k: i32) -> f64 {
    let m = ref_mean(xs);
    let mut s = 0.0;
    for x in xs.iter().rev() {
        let d = x - m;
        let mut p = 1.0;
        for _ in 0..k {
            p *= d;
        }
        s += p;
    }
    s / xs.len() as f64
}

pub fn ref_skewness(xs: &[f64]) -> f64 {
    ref_moment(xs, 3) / ref_moment(xs, 2).powf(1.5)
}

pub fn ref_kurtosis(xs: &[f64]) -> f64 {
    let m2 = ref_moment(xs, 2);
    ref_moment(xs, 4) / (m2 * m2)
}

pub fn ref_cv(xs: &[f64]) -> f64 {
    ref_moment(xs, 2).sqrt() / ref_mean(xs).abs()
}

/// Quantile by the (n−1)p + 1 rank rule with linear interpolation.
pub fn ref_quantile(xs: &[f64], p: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = 1.0 + (s.len() - 1) as f64 * p;
    let k = rank.floor();
    let frac = rank - k;
    let lo = s[k as usize - 1];
    if frac == 0.0 {
        lo
    } else {
        lo + frac * (s[k as usize] - lo)
    }
}

pub fn ref_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mx, my) = (ref_mean(x), ref_mean(y));
    for (a, b) in x.iter().zip(y) {
        let (a, b) = (a - mx, b - my);
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let cov = sxy - sx * sy / n;
    cov / ((sxx - sx * sx / n) * (syy - sy * sy / n)).sqrt()
}

pub fn t_two_sided(t: f64, df: f64) -> f64 {
    let d = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * d.sf(t.abs())
}

pub fn ref_correlation_p(rho: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
}

/// Slope, r² and two-sided slope t-test p-value of y on 0..n, via the slope's
/// standard error rather than through ρ.
pub fn ref_trend(ys: &[f64]) -> (f64, f64, f64) {
    let n = ys.len() as f64;
    let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
    let mx = (n - 1.0) / 2.0;
    let my = ref_mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - sse / sst;
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let p = if se == 0.0 { 0.0 } else { t_two_sided(slope / se, n - 2.0) };
    (slope, r2, p)
}

pub struct RefWelch {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn ref_welch(a: &[f64], b: &[f64]) -> RefWelch {
    let var = |xs: &[f64]| ref_moment(xs, 2) * xs.len() as f64 / (xs.len() as f64 - 1.0);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (var(a) / na, var(b) / nb);
    let t = (ref_mean(a) - ref_mean(b)) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va.powi(2) / (na - 1.0) + vb.powi(2) / (nb - 1.0));
    RefWelch { t, df, p: t_two_sided(t, df) }
}

/// χ² = Σ O²/E − N, its degrees of freedom and upper-tail p-value.
pub fn ref_chi_square(m: &[Vec<f64>]) -> (f64, f64, f64) {
    let total: f64 = m.iter().flatten().sum();
    let rows: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).sum()).collect();
    let mut s = 0.0;
    for (i, r) in m.iter().enumerate() {
        for (j, o) in r.iter().enumerate() {
            s += o * o / (rows[i] * cols[j] / total);
        }
    }
    let stat = s - total;
    let dof = ((m.len() - 1) * (m[0].len() - 1)) as f64;
    (stat, dof, ChiSquared::new(dof).unwrap().sf(stat))
}

pub fn normal_sf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().sf(z)
}

pub type Tuple = (Vec<String>, Vec<String>, Option<u64>, Option<(u32, bool)>);

/// Every cell as (row path, column path, value bits, id), sorted. Independent of
/// sibling order.
pub fn canonical(s: &TableState) -> Vec<Tuple> {
    let rows = s.row_tree().leaf_paths();
    let cols = s.col_tree().leaf_paths();
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            let cell = s.grid().get(i, j);
            out.push((r.clone(), c.clone(), cell.value.map(f64::to_bits), cell.id.map(|id| (id.index, id.derived))));
        }
    }
    out.sort();
    out
}

/// Multiset of (all labels on both paths, value) over cells that carry an id.
pub fn labeled_tuples(s: &TableState) -> Vec<(Vec<String>, Option<u64>)> {
    let rows = s.row_tree().leaf_paths();
    let cols = s.col_tree().leaf_paths();
    let mut out = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            let cell = s.grid().get(i, j);
            if cell.id.is_some() {
                let mut labels: Vec<String> = r.iter().chain(c).cloned().collect();
                labels.sort();
                out.push((labels, cell.value.map(f64::to_bits)));
            }
        }
    }
    out.sort();
    out
}

pub fn original_ids(s: &TableState) -> Vec<u32> {
    let mut ids: Vec<u32> =
        s.grid().cells().iter().filter_map(|c| c.id).filter(|id| !id.derived).map(|id| id.index).collect();
    ids.sort_unstable();
    ids
}
