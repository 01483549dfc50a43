//! A session: one table, its insight ledger and the mixed-initiative operations on it.
//!
//! The persisted form is [`SessionData`]. The live [`TableState`] and [`Metrics`] are
//! derived from it and rebuilt on load. The current table is always kept in canonical
//! form (equal to a fresh parse of its own document), so block entry ids in an export
//! resolve against a fresh parse.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tabsight_core::agent::baselines::baseline_action;
use tabsight_core::agent::{Agent, BaselinePolicy};
use tabsight_core::env::{compute_metrics, Metrics};
use tabsight_core::insight::{
    compose_multiblock, detect_all, recommend_blocks, BlockRelation, DetectorConfig, Finding, InsightKind,
    InsightRecord, MultiBlockInsight, Provenance,
};
use tabsight_core::table::{overlaps_mask, HeadingTree, NodeId, RecordId, TableError};
use tabsight_core::transform::{self, AggregateFn};
use tabsight_core::{ActionKind, Block, EngineConfig, EpisodeConfig, TableDocument, TableEnv, TableState};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("insight {0} not found")]
    InsightNotFound(u64),
    #[error("invalid table document at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid table: {0}")]
    Table(TableError),
    #[error("block ({row}, {col}) cannot be resolved: {reason}")]
    Unresolvable { row: NodeId, col: NodeId, reason: String },
    #[error("block overlaps an embedded insight")]
    Overlap,
    #[error("{kind} does not fire on this block")]
    NotApplicable { kind: InsightKind },
    #[error("a recommendation run is already in progress for this session")]
    RunInProgress,
    #[error("recommendation budget {0} exceeds the limit of {1}")]
    BudgetTooLarge(usize, usize),
    #[error("{0}")]
    BadRequest(String),
    #[error("recommendation failed: {0}")]
    Run(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TableError> for SessionError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Schema { path, message } => SessionError::Schema { path, message },
            other => SessionError::Table(other),
        }
    }
}

/// A removed (block, kind) pair, keyed by the label paths of the block's entries so it
/// survives re-layouts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Tombstone {
    pub row_path: Vec<String>,
    pub col_path: Vec<String>,
    pub kind: InsightKind,
}

/// Canonical table JSON plus the ledger. Accepted by session creation, so an export
/// can be re-imported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AnnotatedDocument {
    pub row_tree: tabsight_core::table::NodeSpec,
    pub col_tree: tabsight_core::table::NodeSpec,
    pub values: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    pub insights: Vec<InsightRecord>,
}

impl AnnotatedDocument {
    pub fn document(&self) -> TableDocument {
        TableDocument { row_tree: self.row_tree.clone(), col_tree: self.col_tree.clone(), values: self.values.clone() }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, SessionError> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| SessionError::Schema { path: e.path().to_string(), message: e.inner().to_string() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionData {
    pub id: String,
    pub revision: u64,
    /// Current table, canonical document form.
    pub document: TableDocument,
    pub selection: [NodeId; 2],
    pub ledger: Vec<InsightRecord>,
    pub tombstones: Vec<Tombstone>,
    pub next_record: u64,
}

/// Who proposes insights during a recommendation run.
pub enum Recommender {
    Greedy,
    Agent { agent: Box<Agent>, name: String },
}

impl Recommender {
    pub fn name(&self) -> &str {
        match self {
            Recommender::Greedy => "greedy",
            Recommender::Agent { name, .. } => name,
        }
    }

    fn choose(&self, env: &TableEnv, rng: &mut ChaCha8Rng) -> Result<ActionKind, String> {
        match self {
            Recommender::Greedy => baseline_action(BaselinePolicy::Greedy, env, rng).map_err(|e| e.to_string()),
            Recommender::Agent { agent, .. } => agent.act(env, rng, true).map_err(|e| e.to_string()),
        }
    }
}

/// Table and ledger after a recommendation run; recorded in the event log so a replay
/// can reproduce the run without the agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunOutcome {
    pub document: TableDocument,
    pub selection: [NodeId; 2],
    pub ledger: Vec<InsightRecord>,
    pub added: Vec<RecordId>,
    pub next_record: u64,
}

#[derive(Clone, Debug)]
pub struct Session {
    data: SessionData,
    state: TableState,
    metrics: Metrics,
}

fn entry_path(tree: &HeadingTree, id: NodeId) -> Vec<String> {
    tree.path(id).into_iter().map(str::to_owned).collect()
}

impl Session {
    /// New session from a (possibly annotated) document. Imported insights must
    /// reference resolvable, disjoint blocks.
    pub fn create(id: String, doc: &AnnotatedDocument) -> Result<Self, SessionError> {
        let state = TableState::from_document(&doc.document())?;
        let canonical = state.to_document();
        let selection = [state.row_tree().selected(), state.col_tree().selected()];
        let data = SessionData {
            id,
            revision: 0,
            document: canonical,
            selection,
            ledger: Vec::new(),
            tombstones: Vec::new(),
            next_record: 1,
        };
        let mut session = Session::from_data(data)?;
        for record in &doc.insights {
            let block = session.resolve(record.block.row_entry, record.block.col_entry)?;
            if block != record.block {
                return Err(SessionError::Unresolvable {
                    row: record.block.row_entry,
                    col: record.block.col_entry,
                    reason: "row and column ranges do not match the entries".into(),
                });
            }
            if session.data.ledger.iter().any(|r| r.id == record.id) {
                return Err(SessionError::BadRequest(format!("duplicate insight id {}", record.id.0)));
            }
            if overlaps_mask(&session.state, &block) {
                return Err(SessionError::Overlap);
            }
            session.state.mark(&block, Some(record.id));
            session.data.ledger.push(record.clone());
            session.data.next_record = session.data.next_record.max(record.id.0 + 1);
        }
        session.metrics = compute_metrics(&session.state, &session.data.ledger);
        Ok(session)
    }

    pub fn from_data(data: SessionData) -> Result<Self, SessionError> {
        let mut state = TableState::from_document(&data.document)?;
        state = state.with_selection(data.selection[0], data.selection[1])?;
        for r in &data.ledger {
            state.mark(&r.block, Some(r.id));
        }
        let metrics = compute_metrics(&state, &data.ledger);
        Ok(Session { data, state, metrics })
    }

    pub fn data(&self) -> &SessionData {
        &self.data
    }

    pub fn id(&self) -> &str {
        &self.data.id
    }

    pub fn revision(&self) -> u64 {
        self.data.revision
    }

    pub fn state(&self) -> &TableState {
        &self.state
    }

    pub fn ledger(&self) -> &[InsightRecord] {
        &self.data.ledger
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn tombstones(&self) -> &[Tombstone] {
        &self.data.tombstones
    }

    fn bump(&mut self) {
        self.data.revision += 1;
    }

    fn resolve(&self, row: NodeId, col: NodeId) -> Result<Block, SessionError> {
        self.state.block(row, col).map_err(|e| SessionError::Unresolvable { row, col, reason: e.to_string() })
    }

    fn record_index(&self, id: RecordId) -> Result<usize, SessionError> {
        self.data.ledger.iter().position(|r| r.id == id).ok_or(SessionError::InsightNotFound(id.0))
    }

    fn tombstone_for(&self, block: &Block, kind: InsightKind) -> Tombstone {
        Tombstone {
            row_path: entry_path(self.state.row_tree(), block.row_entry),
            col_path: entry_path(self.state.col_tree(), block.col_entry),
            kind,
        }
    }

    fn is_tombstoned(&self, state: &TableState, block: &Block, kind: InsightKind) -> bool {
        let row = entry_path(state.row_tree(), block.row_entry);
        let col = entry_path(state.col_tree(), block.col_entry);
        self.data.tombstones.iter().any(|t| t.kind == kind && t.row_path == row && t.col_path == col)
    }

    pub fn annotated_export(&self) -> AnnotatedDocument {
        let doc = &self.data.document;
        AnnotatedDocument {
            row_tree: doc.row_tree.clone(),
            col_tree: doc.col_tree.clone(),
            values: doc.values.clone(),
            insights: self.data.ledger.clone(),
        }
    }

    /// Deletes a record, clears its cells and remembers the (block, kind) pair so later
    /// runs do not propose it again.
    pub fn remove_insight(&mut self, id: RecordId) -> Result<&Metrics, SessionError> {
        let index = self.record_index(id)?;
        let record = self.data.ledger.remove(index);
        self.state.mark(&record.block, None);
        let tomb = self.tombstone_for(&record.block, record.kind);
        if !self.data.tombstones.contains(&tomb) {
            self.data.tombstones.push(tomb);
        }
        self.metrics = compute_metrics(&self.state, &self.data.ledger);
        self.bump();
        Ok(&self.metrics)
    }

    /// Other findings on the record's block, best first, as they would look if chosen.
    pub fn alternatives(&self, id: RecordId, detectors: &DetectorConfig) -> Result<Vec<InsightRecord>, SessionError> {
        let record = &self.data.ledger[self.record_index(id)?];
        let found = match detect_all(&self.state, &record.block, detectors) {
            Ok(found) => found,
            Err(TableError::EmptyBlock) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(found
            .into_iter()
            .filter(|f| f.kind != record.kind)
            .map(|f| InsightRecord::new(record.id, record.block.clone(), f, Provenance::Manual))
            .collect())
    }

    pub fn replace_insight(
        &mut self,
        id: RecordId,
        kind: InsightKind,
        detectors: &DetectorConfig,
    ) -> Result<&InsightRecord, SessionError> {
        let replacement = self
            .alternatives(id, detectors)?
            .into_iter()
            .find(|r| r.kind == kind)
            .ok_or(SessionError::NotApplicable { kind })?;
        let index = self.record_index(id)?;
        self.data.ledger[index] = replacement;
        self.metrics = compute_metrics(&self.state, &self.data.ledger);
        self.bump();
        Ok(&self.data.ledger[index])
    }

    pub fn add_manual_insight(
        &mut self,
        row: NodeId,
        col: NodeId,
        kind: InsightKind,
        detectors: &DetectorConfig,
    ) -> Result<&InsightRecord, SessionError> {
        let block = self.resolve(row, col)?;
        if overlaps_mask(&self.state, &block) {
            return Err(SessionError::Overlap);
        }
        let finding: Finding = match detect_all(&self.state, &block, detectors) {
            Ok(found) => found.into_iter().find(|f| f.kind == kind),
            Err(TableError::EmptyBlock) => None,
            Err(e) => return Err(e.into()),
        }
        .ok_or(SessionError::NotApplicable { kind })?;
        let id = RecordId(self.data.next_record);
        self.data.next_record += 1;
        self.state.mark(&block, Some(id));
        self.data.ledger.push(InsightRecord::new(id, block, finding, Provenance::Manual));
        self.metrics = compute_metrics(&self.state, &self.data.ledger);
        self.bump();
        Ok(self.data.ledger.last().expect("just pushed"))
    }

    /// Applies one transformation by hand. Like an agent transformation it clears the
    /// ledger. `aggregate` may name the sum instead of the agent's mean.
    pub fn transform(&mut self, action: ActionKind, aggregate: Option<AggregateFn>) -> Result<(), SessionError> {
        if !action.is_transformation() {
            return Err(SessionError::BadRequest(format!("{action} is not a transformation")));
        }
        let legal = transform::legal_actions(&self.state, action.stage());
        if !legal.allows(action) {
            return Err(SessionError::BadRequest(format!("{action} is not applicable to this table")));
        }
        let next = match (action, aggregate) {
            (ActionKind::Aggregate, Some(f)) => transform::aggregate_with(&self.state, f),
            _ => transform::apply(&self.state, action).map_err(|e| SessionError::BadRequest(e.to_string()))?,
        };
        let mut next = canonicalize(&next);
        next.clear_marks();
        self.data.document = next.to_document();
        self.data.selection = [next.row_tree().selected(), next.col_tree().selected()];
        self.data.ledger.clear();
        self.state = next;
        self.metrics = compute_metrics(&self.state, &self.data.ledger);
        self.bump();
        Ok(())
    }

    /// Lets the recommender act for at most `budget` environment steps.
    ///
    /// A run on an empty ledger starts in the transformation stage. Otherwise it starts
    /// in the selection stage, so existing records are never cleared. Embeddings that hit
    /// a tombstone fall back to the best alternative that does not, or are dropped.
    pub fn run_recommendation(
        &self,
        budget: usize,
        seed: u64,
        engine: &EngineConfig,
        recommender: &Recommender,
    ) -> Result<RunOutcome, SessionError> {
        let mut outcome = RunOutcome {
            document: self.data.document.clone(),
            selection: self.data.selection,
            ledger: self.data.ledger.clone(),
            added: Vec::new(),
            next_record: self.data.next_record,
        };
        if budget == 0 {
            return Ok(outcome);
        }
        let start = if self.data.ledger.is_empty() { 0 } else { engine.episode.transform_steps() };
        let config = EpisodeConfig { total_steps: start + budget, seed, ..engine.episode.clone() };
        let mut env = TableEnv::new(self.state.clone(), config, engine.detectors.clone());
        env.resume(self.state.clone(), self.data.ledger.clone(), start);
        env.set_next_record_id(self.data.next_record);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next_record = self.data.next_record;
        while !env.is_done() {
            let action = recommender.choose(&env, &mut rng).map_err(SessionError::Run)?;
            let out = env.step(action).map_err(|e| SessionError::Run(e.to_string()))?;
            let Some(record) = out.info.embedded else { continue };
            next_record = next_record.max(record.id.0 + 1);
            if !self.is_tombstoned(env.state(), &record.block, record.kind) {
                continue;
            }
            let mut state = env.state().clone();
            let mut ledger = env.ledger().to_vec();
            let last = ledger.pop().expect("embedded record is last");
            match out.info.alternatives.into_iter().find(|f| !self.is_tombstoned(&state, &last.block, f.kind)) {
                Some(f) => ledger.push(InsightRecord::new(last.id, last.block, f, Provenance::Agent)),
                None => state.mark(&last.block, None),
            }
            let steps = env.steps();
            env.resume(state, ledger, steps);
            env.set_next_record_id(next_record);
        }
        let before: Vec<RecordId> = self.data.ledger.iter().map(|r| r.id).collect();
        let (state, ledger) = canonical_with_ledger(env.state(), env.ledger());
        outcome.added = ledger.iter().map(|r| r.id).filter(|id| !before.contains(id)).collect();
        outcome.document = state.to_document();
        outcome.selection = [state.row_tree().selected(), state.col_tree().selected()];
        outcome.ledger = ledger;
        outcome.next_record = next_record;
        Ok(outcome)
    }

    /// Installs a run's outcome as the new session state.
    pub fn apply_outcome(&mut self, outcome: &RunOutcome) -> Result<(), SessionError> {
        let data = SessionData {
            id: self.data.id.clone(),
            revision: self.data.revision + 1,
            document: outcome.document.clone(),
            selection: outcome.selection,
            ledger: outcome.ledger.clone(),
            tombstones: self.data.tombstones.clone(),
            next_record: outcome.next_record,
        };
        *self = Session::from_data(data)?;
        Ok(())
    }

    /// Name- and topology-related blocks of each record and the multi-block patterns
    /// they form, for the UI's cue layers.
    pub fn cues(&self, detectors: &DetectorConfig) -> Vec<InsightCues> {
        self.data
            .ledger
            .iter()
            .map(|record| {
                let relations = recommend_blocks(&self.state, &record.block);
                let patterns = relations
                    .iter()
                    .filter_map(|rel| {
                        let kinds: Vec<Vec<InsightKind>> = rel
                            .related
                            .iter()
                            .map(|b| {
                                detect_all(&self.state, b, detectors)
                                    .map(|fs| fs.into_iter().map(|f| f.kind).collect())
                                    .unwrap_or_default()
                            })
                            .collect();
                        compose_multiblock(rel, &kinds).ok().flatten()
                    })
                    .collect();
                InsightCues { insight: record.id, relations, patterns }
            })
            .collect()
    }

    /// Metrics recomputed from the ledger and mask, for consistency checks.
    pub fn recomputed_metrics(&self) -> Metrics {
        compute_metrics(&self.state, &self.data.ledger)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InsightCues {
    pub insight: RecordId,
    pub relations: Vec<BlockRelation>,
    pub patterns: Vec<MultiBlockInsight>,
}

/// Reparses a state from its own document, keeping the selection by label path.
fn canonicalize(state: &TableState) -> TableState {
    canonical_with_ledger(state, &[]).0
}

fn remap(from: &HeadingTree, to: &HeadingTree, id: NodeId) -> NodeId {
    to.find_path(&from.path(id)).expect("canonical trees carry the same label paths")
}

fn canonical_with_ledger(state: &TableState, ledger: &[InsightRecord]) -> (TableState, Vec<InsightRecord>) {
    let fresh = TableState::from_document(&state.to_document()).expect("a state's own document is valid");
    let (rows, cols) = (state.row_tree(), state.col_tree());
    let row = remap(rows, fresh.row_tree(), rows.selected());
    let col = remap(cols, fresh.col_tree(), cols.selected());
    let mut fresh = fresh.with_selection(row, col).expect("remapped ids exist");
    let ledger: Vec<InsightRecord> = ledger
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let row = remap(rows, fresh.row_tree(), r.block.row_entry);
            let col = remap(cols, fresh.col_tree(), r.block.col_entry);
            r.block = fresh.block(row, col).expect("remapped ids exist");
            r
        })
        .collect();
    for r in &ledger {
        fresh.mark(&r.block, Some(r.id));
    }
    fresh.set_step(state.step());
    (fresh, ledger)
}
