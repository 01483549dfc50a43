//! Experiment harnesses: the stage-ratio × GCN-depth sweep, robustness over randomized
//! headings, and per-kind insight counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::baselines::{run_baseline, run_episode, BaselinePolicy};
use crate::agent::train::{train, TrainConfig, TrainError};
use crate::env::{EnvError, EpisodeConfig, Metrics, TableEnv};
use crate::insight::{detect_all, DetectorConfig, InsightKind};
use crate::table::{NodeSpec, TableDocument, TableError, TableState};
use crate::transform::{self, legal_actions, ActionKind, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub stage_ratios: Vec<f64>,
    pub layers: Vec<usize>,
    pub train: TrainConfig,
    pub episode: EpisodeConfig,
    pub eval_episodes: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            stage_ratios: vec![0.01, 0.04, 0.08, 0.12, 0.16],
            layers: vec![1, 2, 3, 4, 5],
            train: TrainConfig { total_steps: 4096, ..TrainConfig::default() },
            episode: EpisodeConfig::default(),
            eval_episodes: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepCell {
    pub stage_ratio: f64,
    pub layers: usize,
    /// Mean number of transformation-stage steps in the evaluation episodes.
    pub stage1_length: f64,
    pub ir: f64,
    pub ar: f64,
    pub er: f64,
    pub extrinsic: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, stage_ratio: f64, layers: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.stage_ratio == stage_ratio && c.layers == layers)
    }

    /// Mean stage-1 length over all depths at one stage ratio.
    pub fn stage1_length(&self, stage_ratio: f64) -> Option<f64> {
        let v: Vec<f64> = self.cells.iter().filter(|c| c.stage_ratio == stage_ratio).map(|c| c.stage1_length).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn axes(&self) -> (Vec<f64>, Vec<usize>) {
        let mut ratios: Vec<f64> = Vec::new();
        let mut layers: Vec<usize> = Vec::new();
        for c in &self.cells {
            if !ratios.contains(&c.stage_ratio) {
                ratios.push(c.stage_ratio);
            }
            if !layers.contains(&c.layers) {
                layers.push(c.layers);
            }
        }
        (ratios, layers)
    }

    /// Plain-text table: one IR/AR/ER row group per stage ratio, one column per depth.
    pub fn render(&self) -> String {
        let (ratios, layers) = self.axes();
        let mut out = String::new();
        let rule = format!("{}\n", "-".repeat(26 + 9 * layers.len()));
        let _ = write!(out, "{:<26}", "GCN Layer (L)");
        for l in &layers {
            let _ = write!(out, "| L = {l:<3}");
        }
        out.push('\n');
        out.push_str(&rule);
        for sr in &ratios {
            for (i, metric) in ["IR", "AR", "ER"].iter().enumerate() {
                let head = match i {
                    0 => "Stage Ratio".to_string(),
                    1 => format!("= {sr}"),
                    _ => String::new(),
                };
                let _ = write!(out, "{head:<22}{metric:<4}");
                for l in &layers {
                    let v = self.cell(*sr, *l).map(|c| [c.ir, c.ar, c.er][i]);
                    match v {
                        Some(v) => {
                            let _ = write!(out, "| {v:<7.3}");
                        }
                        None => out.push_str("| -      "),
                    }
                }
                out.push('\n');
            }
            out.push_str(&rule);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage_ratio,layers,stage1_length,ir,ar,er,r_ext\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.stage_ratio, c.layers, c.stage1_length, c.ir, c.ar, c.er, c.extrinsic
            );
        }
        out
    }
}

/// Trains one agent per (SR, L) pair and evaluates its most probable actions.
pub fn sweep(
    tables: &[TableState],
    cfg: &SweepConfig,
    detectors: &DetectorConfig,
    mut progress: impl FnMut(&SweepCell),
) -> Result<SweepReport, TrainError> {
    let mut report = SweepReport::default();
    for &sr in &cfg.stage_ratios {
        for &layers in &cfg.layers {
            let mut tc = cfg.train.clone();
            tc.net.gcn_layers = layers;
            let episode = EpisodeConfig { stage_ratio: sr, ..cfg.episode.clone() };
            let trainer = train(tables, tc, episode.clone(), detectors.clone())?;
            let mut cell =
                SweepCell { stage_ratio: sr, layers, stage1_length: 0.0, ir: 0.0, ar: 0.0, er: 0.0, extrinsic: 0.0 };
            let mut n = 0.0;
            for table in tables {
                for i in 0..cfg.eval_episodes {
                    let ep = EpisodeConfig { seed: episode.seed + i as u64, ..episode.clone() };
                    let mut rng = ChaCha8Rng::seed_from_u64(ep.seed);
                    let mut env = TableEnv::new(table.clone(), ep, detectors.clone());
                    let trace = run_episode(&mut env, |e| {
                        trainer.agent.act(e, &mut rng, true).map_err(|_| EnvError::Finished)
                    })?;
                    cell.stage1_length += trace.steps.iter().filter(|s| s.stage == Stage::Transform).count() as f64;
                    cell.ir += trace.metrics.ir;
                    cell.ar += trace.metrics.ar;
                    cell.er += trace.metrics.er;
                    cell.extrinsic += trace.total_extrinsic;
                    n += 1.0;
                }
            }
            if n > 0.0 {
                for v in [&mut cell.stage1_length, &mut cell.ir, &mut cell.ar, &mut cell.er, &mut cell.extrinsic] {
                    *v /= n;
                }
            }
            progress(&cell);
            report.cells.push(cell);
        }
    }
    Ok(report)
}

fn shuffle_spec(spec: &NodeSpec, rng: &mut impl Rng) -> NodeSpec {
    let mut children: Vec<NodeSpec> = spec.children.iter().map(|c| shuffle_spec(c, rng)).collect();
    children.shuffle(rng);
    NodeSpec { label: spec.label.clone(), children }
}

fn leaf_paths(spec: &NodeSpec) -> Vec<Vec<String>> {
    fn walk(node: &NodeSpec, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        for c in &node.children {
            prefix.push(c.label.clone());
            if c.children.is_empty() {
                out.push(prefix.clone());
            } else {
                walk(c, prefix, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    walk(spec, &mut Vec::new(), &mut out);
    out
}

/// Shuffles sibling order at every level of both heading trees, keeping each value
/// attached to its (row path, column path).
pub fn shuffle_headings(table: &TableState, rng: &mut impl Rng) -> Result<TableState, TableError> {
    let doc = table.to_document();
    let row_tree = shuffle_spec(&doc.row_tree, rng);
    let col_tree = shuffle_spec(&doc.col_tree, rng);
    let index = |old: &NodeSpec, new: &NodeSpec| -> Vec<usize> {
        let before = leaf_paths(old);
        leaf_paths(new).iter().map(|p| before.iter().position(|q| q == p).expect("same leaves")).collect()
    };
    let rows = index(&doc.row_tree, &row_tree);
    let cols = index(&doc.col_tree, &col_tree);
    let values = rows.iter().map(|&r| cols.iter().map(|&c| doc.values[r][c]).collect()).collect();
    TableState::from_document(&TableDocument { row_tree, col_tree, values })
}

/// A random heading initialization: shuffled sibling orders followed by up to
/// `max_transforms` random structural transformations (aggregation excluded).
pub fn randomize_headings(
    table: &TableState,
    max_transforms: usize,
    rng: &mut impl Rng,
) -> Result<TableState, TableError> {
    let mut state = shuffle_headings(table, rng)?;
    let k = rng.gen_range(0..=max_transforms);
    for _ in 0..k {
        let legal: Vec<ActionKind> =
            legal_actions(&state, Stage::Transform).legal().filter(|a| *a != ActionKind::Aggregate).collect();
        let Some(action) = legal.choose(rng) else { break };
        state = transform::apply(&state, *action).expect("legal action applies");
    }
    state.set_step(0);
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub initializations: usize,
    pub max_transforms: usize,
    pub policy: BaselinePolicy,
    pub episode: EpisodeConfig,
    pub seed: u64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            initializations: 10,
            max_transforms: 3,
            policy: BaselinePolicy::Greedy,
            episode: EpisodeConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanSd { mean: f64::NAN, sd: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        MeanSd { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RobustnessReport {
    pub table: String,
    pub cells: usize,
    pub runs: Vec<Metrics>,
    pub ir: MeanSd,
    pub ar: MeanSd,
    pub er: MeanSd,
}

impl RobustnessReport {
    pub fn render(&self) -> String {
        format!(
            "{:<24} cells {:>5}  IR {:.3} ± {:.3}  AR {:.3} ± {:.3}  ER {:.3} ± {:.3}",
            self.table, self.cells, self.ir.mean, self.ir.sd, self.ar.mean, self.ar.sd, self.er.mean, self.er.sd
        )
    }
}

/// Runs the baseline policy from `cfg.initializations` random heading initializations.
pub fn robustness(
    name: &str,
    table: &TableState,
    cfg: &RobustnessConfig,
    detectors: &DetectorConfig,
) -> Result<RobustnessReport, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut runs = Vec::with_capacity(cfg.initializations);
    for i in 0..cfg.initializations {
        let init = randomize_headings(table, cfg.max_transforms, &mut rng)?;
        let ep = EpisodeConfig { seed: cfg.episode.seed + i as u64, ..cfg.episode.clone() };
        runs.push(run_baseline(cfg.policy, &init, &ep, detectors)?.metrics);
    }
    let pick = |f: fn(&Metrics) -> f64| MeanSd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(RobustnessReport {
        table: name.to_string(),
        cells: table.grid().len(),
        ir: pick(|m| m.ir),
        ar: pick(|m| m.ar),
        er: pick(|m| m.er),
        runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KindCounts {
    pub table: String,
    /// Blocks examined: every (row entry, column entry) pair.
    pub blocks: usize,
    /// Fired detectors over all blocks, per kind.
    pub candidates: BTreeMap<InsightKind, usize>,
    /// Insights embedded by one greedy episode, per kind.
    pub embedded: BTreeMap<InsightKind, usize>,
}

impl KindCounts {
    pub fn render(&self) -> String {
        let mut out = format!(
            "table {}  blocks {}\n{:<22}{:>11}{:>10}\n",
            self.table, self.blocks, "kind", "candidates", "embedded"
        );
        for kind in InsightKind::ALL {
            let _ = writeln!(
                out,
                "{:<22}{:>11}{:>10}",
                kind.name(),
                self.candidates.get(&kind).copied().unwrap_or(0),
                self.embedded.get(&kind).copied().unwrap_or(0)
            );
        }
        out
    }
}

/// Per-kind insight counts for one table: every block's fired detectors, plus the
/// insights a greedy episode embeds.
pub fn kind_counts(
    name: &str,
    table: &TableState,
    episode: &EpisodeConfig,
    detectors: &DetectorConfig,
) -> Result<KindCounts, EnvError> {
    let mut candidates = BTreeMap::new();
    let mut blocks = 0;
    let entries = |state: &TableState, side| -> Vec<_> {
        let tree = state.tree(side);
        (0..tree.levels()).flat_map(|d| tree.nodes_at_depth(d).to_vec()).collect()
    };
    let rows = entries(table, crate::table::Side::Row);
    let cols = entries(table, crate::table::Side::Col);
    for &r in &rows {
        for &c in &cols {
            let block = table.block(r, c)?;
            blocks += 1;
            match detect_all(table, &block, detectors) {
                Ok(found) => {
                    for f in found {
                        *candidates.entry(f.kind).or_default() += 1;
                    }
                }
                Err(TableError::EmptyBlock) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let trace = run_baseline(BaselinePolicy::Greedy, table, episode, detectors)?;
    let mut embedded = BTreeMap::new();
    for record in &trace.ledger {
        *embedded.entry(record.kind).or_default() += 1;
    }
    Ok(KindCounts { table: name.to_string(), blocks, candidates, embedded })
}
