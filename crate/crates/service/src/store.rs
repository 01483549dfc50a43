//! File-backed session store.
//!
//! Each session lives in `<data_dir>/sessions/<id>/` as an append-only `events.jsonl`
//! plus a `snapshot.json` rewritten every [`SNAPSHOT_EVERY`] revisions. Loading reads
//! the snapshot and applies the events after it.
//!
//! Writers take the session's mutex; readers clone the latest published snapshot.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use tabsight_core::insight::{InsightKind, InsightRecord};
use tabsight_core::table::{NodeId, RecordId};
use tabsight_core::transform::AggregateFn;
use tabsight_core::{ActionKind, EngineConfig};

use crate::session::{AnnotatedDocument, Recommender, RunOutcome, Session, SessionData, SessionError};

pub const SNAPSHOT_EVERY: u64 = 8;

/// Largest step budget a single recommendation request may ask for.
pub const MAX_BUDGET: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum Event {
    Created { document: AnnotatedDocument },
    Recommended { budget: usize, seed: u64, recommender: String, outcome: RunOutcome },
    Removed { insight: RecordId },
    Replaced { insight: RecordId, kind: InsightKind },
    Added { row_entry: NodeId, col_entry: NodeId, kind: InsightKind, record: RecordId },
    Transformed { action: ActionKind, aggregate: Option<AggregateFn> },
}

/// One line of `events.jsonl`: the event and the revision it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub revision: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Applies a logged event to a session, checking that it lands on the logged revision.
/// Runs are installed from their recorded outcome.
pub fn apply_event(
    session: &mut Option<Session>,
    id: &str,
    entry: &LogEntry,
    engine: &EngineConfig,
) -> Result<(), SessionError> {
    let mismatch = |what: &str| SessionError::BadRequest(format!("event at revision {}: {what}", entry.revision));
    if let Event::Created { document } = &entry.event {
        if session.is_some() {
            return Err(mismatch("session created twice"));
        }
        *session = Some(Session::create(id.to_string(), document)?);
        return Ok(());
    }
    let s = session.as_mut().ok_or_else(|| mismatch("event before creation"))?;
    let d = &engine.detectors;
    match &entry.event {
        Event::Created { .. } => unreachable!(),
        Event::Recommended { outcome, .. } => s.apply_outcome(outcome)?,
        Event::Removed { insight } => {
            s.remove_insight(*insight)?;
        }
        Event::Replaced { insight, kind } => {
            s.replace_insight(*insight, *kind, d)?;
        }
        Event::Added { row_entry, col_entry, kind, record } => {
            let got = s.add_manual_insight(*row_entry, *col_entry, *kind, d)?.id;
            if got != *record {
                return Err(mismatch(&format!("manual insight got id {} instead of {}", got.0, record.0)));
            }
        }
        Event::Transformed { action, aggregate } => s.transform(*action, *aggregate)?,
    }
    if s.revision() != entry.revision {
        return Err(mismatch(&format!("session is at revision {}", s.revision())));
    }
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, SessionError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| SessionError::BadRequest(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

/// Summary of a replayed session log.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplayReport {
    pub events: usize,
    pub revision: u64,
    /// Runs re-executed with the same recommender and found identical.
    pub reexecuted_runs: usize,
    /// Runs installed from their recorded outcome.
    pub recorded_runs: usize,
    pub final_state: AnnotatedDocument,
    pub metrics: tabsight_core::Metrics,
}

/// Replays a session log from scratch. Runs whose recorded recommender matches
/// `recommender` are re-executed and must reproduce their outcome exactly.
pub fn replay(
    path: &Path,
    engine: &EngineConfig,
    recommender: Option<&Recommender>,
) -> Result<ReplayReport, SessionError> {
    let entries = read_log(path)?;
    let id = path
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "replay".into());
    let mut session: Option<Session> = None;
    let (mut reexecuted, mut recorded) = (0, 0);
    for entry in &entries {
        if let (Event::Recommended { budget, seed, recommender: name, outcome }, Some(r), Some(s)) =
            (&entry.event, recommender, session.as_ref())
        {
            if r.name() == name {
                let again = s.run_recommendation(*budget, *seed, engine, r)?;
                if again != *outcome {
                    return Err(SessionError::BadRequest(format!(
                        "run at revision {} did not reproduce its recorded outcome",
                        entry.revision
                    )));
                }
                reexecuted += 1;
            } else {
                recorded += 1;
            }
        } else if matches!(entry.event, Event::Recommended { .. }) {
            recorded += 1;
        }
        apply_event(&mut session, &id, entry, engine)?;
    }
    let s = session.ok_or_else(|| SessionError::BadRequest("empty session log".into()))?;
    if s.recomputed_metrics() != *s.metrics() {
        return Err(SessionError::BadRequest("replayed metrics disagree with a recomputation".into()));
    }
    Ok(ReplayReport {
        events: entries.len(),
        revision: s.revision(),
        reexecuted_runs: reexecuted,
        recorded_runs: recorded,
        final_state: s.annotated_export(),
        metrics: s.metrics().clone(),
    })
}

/// One session: a writer lock over the live session, the last published snapshot and a
/// run-in-progress flag.
pub struct Slot {
    writer: Mutex<Session>,
    published: RwLock<Arc<Session>>,
    running: AtomicBool,
    dir: PathBuf,
}

/// Held for the duration of a recommendation run.
pub struct RunGuard {
    slot: Arc<Slot>,
}

impl Drop for RunGuard {
    fn drop(&mut self) {
        self.slot.running.store(false, Ordering::Release);
    }
}

impl Slot {
    pub fn snapshot(&self) -> Arc<Session> {
        self.published.read().expect("snapshot lock").clone()
    }

    fn append(&self, entry: &LogEntry) -> Result<(), SessionError> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join("events.jsonl"))?;
        let mut line = serde_json::to_vec(entry).expect("events serialize");
        line.push(b'\n');
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    fn write_snapshot(&self, session: &Session) -> Result<(), SessionError> {
        let tmp = self.dir.join("snapshot.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(session.data()).expect("snapshots serialize"))?;
        fs::rename(tmp, self.dir.join("snapshot.json"))?;
        Ok(())
    }

    /// Runs a mutation under the writer lock. On success the event is logged and a new
    /// snapshot published; on failure the live session is left untouched.
    fn mutate<T>(
        &self,
        f: impl FnOnce(&mut Session) -> Result<(T, Option<Event>), SessionError>,
    ) -> Result<T, SessionError> {
        let mut live = self.writer.lock().expect("writer lock");
        let mut draft = live.clone();
        let (out, event) = f(&mut draft)?;
        if let Some(event) = event {
            self.append(&LogEntry { revision: draft.revision(), event })?;
            if draft.revision().is_multiple_of(SNAPSHOT_EVERY) {
                self.write_snapshot(&draft)?;
            }
            *live = draft;
            *self.published.write().expect("snapshot lock") = Arc::new(live.clone());
        }
        Ok(out)
    }
}

pub struct SessionStore {
    root: PathBuf,
    engine: EngineConfig,
    recommender: Recommender,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
}

fn new_id() -> String {
    format!("{:016x}", rand::thread_rng().gen::<u64>())
}

impl SessionStore {
    /// Opens (or creates) the store under `data_dir` and loads every saved session.
    pub fn open(data_dir: &Path, engine: EngineConfig, recommender: Recommender) -> Result<Self, SessionError> {
        let root = data_dir.join("sessions");
        fs::create_dir_all(&root)?;
        let store = SessionStore { root, engine, recommender, sessions: RwLock::new(HashMap::new()) };
        let mut loaded = HashMap::new();
        for entry in fs::read_dir(&store.root)? {
            let dir = entry?.path();
            if !dir.join("events.jsonl").exists() {
                continue;
            }
            let session = store.load(&dir)?;
            loaded.insert(session.id().to_string(), Arc::new(store.slot(session, dir)));
        }
        *store.sessions.write().expect("session map") = loaded;
        Ok(store)
    }

    fn load(&self, dir: &Path) -> Result<Session, SessionError> {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut session = match fs::read(dir.join("snapshot.json")) {
            Ok(bytes) => {
                let data: SessionData =
                    serde_json::from_slice(&bytes).map_err(|e| SessionError::BadRequest(format!("snapshot: {e}")))?;
                Some(Session::from_data(data)?)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let after = session.as_ref().map(|s| s.revision());
        for entry in read_log(&dir.join("events.jsonl"))? {
            if after.is_some_and(|rev| entry.revision <= rev) {
                continue;
            }
            apply_event(&mut session, &id, &entry, &self.engine)?;
        }
        session.ok_or_else(|| SessionError::BadRequest(format!("{}: empty session log", dir.display())))
    }

    fn slot(&self, session: Session, dir: PathBuf) -> Slot {
        Slot {
            published: RwLock::new(Arc::new(session.clone())),
            writer: Mutex::new(session),
            running: AtomicBool::new(false),
            dir,
        }
    }

    pub fn engine(&self) -> &EngineConfig {
        &self.engine
    }

    pub fn recommender(&self) -> &Recommender {
        &self.recommender
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Slot>, SessionError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::SessionNotFound(id.to_string()))
    }

    pub fn snapshot(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        Ok(self.get(id)?.snapshot())
    }

    pub fn create(&self, doc: AnnotatedDocument) -> Result<Arc<Session>, SessionError> {
        let id = new_id();
        let session = Session::create(id.clone(), &doc)?;
        let dir = self.root.join(&id);
        fs::create_dir_all(&dir)?;
        let slot = Arc::new(self.slot(session.clone(), dir));
        slot.append(&LogEntry { revision: 0, event: Event::Created { document: doc } })?;
        slot.write_snapshot(&session)?;
        let snapshot = slot.snapshot();
        self.sessions.write().expect("session map").insert(id, slot);
        Ok(snapshot)
    }

    /// Marks a run as in progress, or fails with [`SessionError::RunInProgress`].
    pub fn begin_run(&self, id: &str) -> Result<RunGuard, SessionError> {
        let slot = self.get(id)?;
        if slot.running.swap(true, Ordering::AcqRel) {
            return Err(SessionError::RunInProgress);
        }
        Ok(RunGuard { slot })
    }

    /// Runs the recommender for up to `budget` steps. Returns the added records.
    pub fn recommend(&self, id: &str, budget: usize) -> Result<(Vec<InsightRecord>, Arc<Session>), SessionError> {
        if budget > MAX_BUDGET {
            return Err(SessionError::BudgetTooLarge(budget, MAX_BUDGET));
        }
        let guard = self.begin_run(id)?;
        let slot = &guard.slot;
        let added = slot.mutate(|s| {
            if budget == 0 {
                return Ok((Vec::new(), None));
            }
            let seed = self.engine.episode.seed.wrapping_add(s.revision());
            let outcome = s.run_recommendation(budget, seed, &self.engine, &self.recommender)?;
            s.apply_outcome(&outcome)?;
            let added: Vec<InsightRecord> =
                s.ledger().iter().filter(|r| outcome.added.contains(&r.id)).cloned().collect();
            let event = Event::Recommended { budget, seed, recommender: self.recommender.name().to_string(), outcome };
            Ok((added, Some(event)))
        })?;
        Ok((added, slot.snapshot()))
    }

    pub fn remove_insight(&self, id: &str, insight: RecordId) -> Result<Arc<Session>, SessionError> {
        let slot = self.get(id)?;
        slot.mutate(|s| {
            s.remove_insight(insight)?;
            Ok(((), Some(Event::Removed { insight })))
        })?;
        Ok(slot.snapshot())
    }

    pub fn alternatives(&self, id: &str, insight: RecordId) -> Result<Vec<InsightRecord>, SessionError> {
        self.snapshot(id)?.alternatives(insight, &self.engine.detectors)
    }

    pub fn replace_insight(
        &self,
        id: &str,
        insight: RecordId,
        kind: InsightKind,
    ) -> Result<Arc<Session>, SessionError> {
        let slot = self.get(id)?;
        slot.mutate(|s| {
            s.replace_insight(insight, kind, &self.engine.detectors)?;
            Ok(((), Some(Event::Replaced { insight, kind })))
        })?;
        Ok(slot.snapshot())
    }

    pub fn add_manual_insight(
        &self,
        id: &str,
        row_entry: NodeId,
        col_entry: NodeId,
        kind: InsightKind,
    ) -> Result<(InsightRecord, Arc<Session>), SessionError> {
        let slot = self.get(id)?;
        let record = slot.mutate(|s| {
            let record = s.add_manual_insight(row_entry, col_entry, kind, &self.engine.detectors)?.clone();
            Ok((record.clone(), Some(Event::Added { row_entry, col_entry, kind, record: record.id })))
        })?;
        Ok((record, slot.snapshot()))
    }

    pub fn transform(
        &self,
        id: &str,
        action: ActionKind,
        aggregate: Option<AggregateFn>,
    ) -> Result<Arc<Session>, SessionError> {
        let slot = self.get(id)?;
        slot.mutate(|s| {
            s.transform(action, aggregate)?;
            Ok(((), Some(Event::Transformed { action, aggregate })))
        })?;
        Ok(slot.snapshot())
    }
}
