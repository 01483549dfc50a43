//! Two-stage episodes over a table: transformations first, then marker moves that
//! embed the best insight of each newly selected block.

mod metrics;
mod observation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{compute_metrics, discounted_return, entropy, Metrics};
pub use observation::{observe, EdgeClass, GraphEdge, GraphNode, Observation, OBSERVATION_VERSION};

use crate::insight::{detect_all, DetectorConfig, Finding, InsightRecord, Provenance};
use crate::table::{overlaps_mask, resolve_block, RecordId, TableError, TableState};
use crate::transform::{self, legal_actions, ActionKind, ActionMask, Stage, TransformError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { eta1: 1.0, eta2: 1.0, eta3: 1.0, gamma: 0.99 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub total_steps: usize,
    pub stage_ratio: f64,
    pub weights: RewardWeights,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { total_steps: 200, stage_ratio: 0.04, weights: RewardWeights::default(), seed: 0 }
    }
}

impl EpisodeConfig {
    /// round(SR·T), at least 1.
    pub fn transform_steps(&self) -> usize {
        ((self.stage_ratio * self.total_steps as f64).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RewardBreakdown {
    pub delta_ar: f64,
    pub delta_ir: f64,
    pub delta_er: f64,
    pub r_c: f64,
    pub r_d: f64,
    pub r_ext: f64,
    pub r_int_heading: f64,
    pub r_int_content: f64,
}

impl RewardBreakdown {
    pub fn from_deltas(before: &Metrics, after: &Metrics, w: &RewardWeights) -> Self {
        let delta_ar = after.ar - before.ar;
        let delta_ir = after.ir - before.ir;
        let delta_er = after.er - before.er;
        let r_c = w.eta1 * delta_ar;
        let r_d = w.eta2 * delta_ir + w.eta3 * delta_er;
        RewardBreakdown { delta_ar, delta_ir, delta_er, r_c, r_d, r_ext: r_c + r_d, ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepInfo {
    pub stage: Stage,
    pub embedded: Option<InsightRecord>,
    /// Remaining detector results on the embedded block.
    pub alternatives: Vec<Finding>,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("action {action} is not legal; legal actions: {legal:?}")]
    IllegalAction { action: ActionKind, mask: ActionMask, legal: Vec<ActionKind> },
    #[error("episode already finished")]
    Finished,
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// One episode over one table. Single writer; clone to branch (baselines do).
#[derive(Clone, Debug)]
pub struct TableEnv {
    initial: TableState,
    state: TableState,
    config: EpisodeConfig,
    detectors: DetectorConfig,
    ledger: Vec<InsightRecord>,
    metrics: Metrics,
    steps: usize,
    done: bool,
    next_record: u64,
}

impl TableEnv {
    pub fn new(table: TableState, config: EpisodeConfig, detectors: DetectorConfig) -> Self {
        let metrics = Metrics::zero(table.grid().len());
        let mut env = TableEnv {
            initial: table.clone(),
            state: table,
            config,
            detectors,
            ledger: Vec::new(),
            metrics,
            steps: 0,
            done: false,
            next_record: 1,
        };
        env.reset();
        env
    }

    pub fn from_document(bytes: &[u8], config: EpisodeConfig, detectors: DetectorConfig) -> Result<Self, EnvError> {
        Ok(TableEnv::new(crate::table::parse_table(bytes)?, config, detectors))
    }

    pub fn reset(&mut self) -> Observation {
        let mut state = self.initial.clone();
        state.grid_mut().clear_viz();
        state.set_step(0);
        self.metrics = Metrics::zero(state.grid().len());
        self.state = state;
        self.ledger.clear();
        self.steps = 0;
        self.done = self.config.total_steps == 0;
        self.next_record = 1;
        self.observation()
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn detectors(&self) -> &DetectorConfig {
        &self.detectors
    }

    pub fn state(&self) -> &TableState {
        &self.state
    }

    pub fn initial_state(&self) -> &TableState {
        &self.initial
    }

    pub fn ledger(&self) -> &[InsightRecord] {
        &self.ledger
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn stage(&self) -> Stage {
        if self.steps < self.config.transform_steps() {
            Stage::Transform
        } else {
            Stage::Select
        }
    }

    pub fn mask(&self) -> ActionMask {
        if self.done {
            ActionMask::none()
        } else {
            legal_actions(&self.state, self.stage())
        }
    }

    pub fn observation(&self) -> Observation {
        observe(&self.state, &self.ledger, self.stage(), self.mask())
    }

    /// Continues from an externally edited state and ledger (mixed-initiative runs).
    pub fn resume(&mut self, state: TableState, ledger: Vec<InsightRecord>, steps: usize) {
        self.next_record = ledger.iter().map(|r| r.id.0 + 1).max().unwrap_or(1).max(self.next_record);
        self.metrics = compute_metrics(&state, &ledger);
        self.state = state;
        self.state.set_step(steps);
        self.ledger = ledger;
        self.steps = steps;
        self.done = self.check_done();
    }

    pub fn set_next_record_id(&mut self, next: u64) {
        self.next_record = next;
    }

    /// Largest extrinsic reward a single embedding could earn on the current layout,
    /// over every (row entry, column entry) block clear of the mask.
    pub fn best_selection_reward(&self) -> f64 {
        let mut best = 0.0f64;
        let mut ledger = self.ledger.clone();
        for row in self.state.row_tree().nodes() {
            for col in self.state.col_tree().nodes() {
                let Ok(block) = self.state.block(row.id, col.id) else { continue };
                if overlaps_mask(&self.state, &block) {
                    continue;
                }
                let Some(head) =
                    detect_all(&self.state, &block, &self.detectors).ok().and_then(|f| f.into_iter().next())
                else {
                    continue;
                };
                ledger.push(InsightRecord::new(RecordId(self.next_record), block, head, Provenance::Agent));
                let after = compute_metrics(&self.state, &ledger);
                ledger.pop();
                best = best.max(RewardBreakdown::from_deltas(&self.metrics, &after, &self.config.weights).r_ext);
            }
        }
        best
    }

    fn check_done(&self) -> bool {
        self.steps >= self.config.total_steps
            || (self.metrics.total_cells > 0 && self.metrics.covered_cells == self.metrics.total_cells)
            || legal_actions(&self.state, self.stage()).is_empty()
    }

    pub fn step(&mut self, action: ActionKind) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        let stage = self.stage();
        let mask = legal_actions(&self.state, stage);
        if !mask.allows(action) {
            return Err(EnvError::IllegalAction { action, mask, legal: mask.legal().collect() });
        }
        let mut reward = RewardBreakdown::default();
        let mut embedded = None;
        let mut alternatives = Vec::new();
        if action.is_transformation() {
            self.state = transform::apply(&self.state, action)?;
            self.ledger.clear();
            self.metrics = Metrics::zero(self.state.grid().len());
        } else {
            self.state = transform::move_selection(&self.state, action)?;
            let block = resolve_block(&self.state);
            if !overlaps_mask(&self.state, &block) {
                let mut found = match detect_all(&self.state, &block, &self.detectors) {
                    Ok(found) => found,
                    Err(TableError::EmptyBlock) => Vec::new(),
                    Err(e) => return Err(e.into()),
                };
                if !found.is_empty() {
                    let head = found.remove(0);
                    alternatives = found;
                    let id = RecordId(self.next_record);
                    self.next_record += 1;
                    for (r, c) in block.cells() {
                        self.state.grid_mut().get_mut(r, c).viz = Some(id);
                    }
                    let record = InsightRecord::new(id, block, head, Provenance::Agent);
                    self.ledger.push(record.clone());
                    let after = compute_metrics(&self.state, &self.ledger);
                    reward = RewardBreakdown::from_deltas(&self.metrics, &after, &self.config.weights);
                    self.metrics = after;
                    embedded = Some(record);
                }
            }
        }
        self.steps += 1;
        self.state.set_step(self.steps);
        self.done = self.check_done();
        Ok(StepOutcome {
            reward,
            done: self.done,
            info: StepInfo { stage, embedded, alternatives, metrics: self.metrics.clone() },
        })
    }
}
