use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tabsight_core::agent::{run_baseline, BaselinePolicy};
use tabsight_core::{parse_table, DetectorConfig, EngineConfig, EpisodeConfig};
use tabsight_service::store::SNAPSHOT_EVERY;
use tabsight_service::{router, Recommender, SessionStore};

fn planted_bytes() -> Vec<u8> {
    std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/planted.json")).unwrap()
}

/// Rows `g → {a, b, c}`, columns `x, y`. Column `x` under `g` is [60, 20, 20] (dominance);
/// column `y` is [30, 35, 35] (top two and evenness).
fn small_doc() -> Value {
    json!({
        "rowTree": {"label": "R", "children": [{"label": "g", "children": [{"label": "a"}, {"label": "b"}, {"label": "c"}]}]},
        "colTree": {"label": "C", "children": [{"label": "x"}, {"label": "y"}]},
        "values": [[60, 30], [20, 35], [20, 35]]
    })
}

struct Harness {
    app: Router,
    store: Arc<SessionStore>,
    _dir: tempfile::TempDir,
}

fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(SessionStore::open(dir.path(), EngineConfig::default(), Recommender::Greedy).unwrap());
    Harness { app: router(store.clone()), store, _dir: dir }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(v) => req.body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn raw(app: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn create(app: &Router, doc: Value) -> (String, Value) {
    let (status, view) = call(app, Method::POST, "/sessions", Some(doc)).await;
    assert_eq!(status, StatusCode::CREATED, "{view}");
    (view["id"].as_str().unwrap().to_string(), view)
}

fn node(view: &Value, side: &str, label: &str) -> u64 {
    view[side].as_array().unwrap().iter().find(|n| n["label"] == label).unwrap()["id"].as_u64().unwrap()
}

async fn add(app: &Router, id: &str, view: &Value, row: &str, col: &str, kind: &str) -> (StatusCode, Value) {
    let body = json!({"rowEntry": node(view, "rows", row), "colEntry": node(view, "cols", col), "kind": kind});
    call(app, Method::POST, &format!("/sessions/{id}/insights"), Some(body)).await
}

#[tokio::test]
async fn create_returns_distinct_ids_and_rejects_malformed_documents() {
    let h = harness();
    let (a, view) = create(&h.app, small_doc()).await;
    let (b, _) = create(&h.app, small_doc()).await;
    assert_ne!(a, b);
    assert_eq!(view["revision"], 0);
    assert_eq!(view["ledger"], json!([]));

    let bad = json!({"rowTree": {"label": "R", "children": [{"label": 5}]}, "colTree": {"label": "C"}, "values": []});
    let (status, err) = call(&h.app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["path"], "rowTree.children[0].label");

    let (status, _) = raw(&h.app, Method::POST, "/sessions", b"{not json".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&h.app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn recommendation_on_the_planted_table_finds_insights() {
    let table = parse_table(&planted_bytes()).unwrap();
    let oracle =
        run_baseline(BaselinePolicy::Greedy, &table, &EpisodeConfig::default(), &DetectorConfig::default()).unwrap();
    assert!(!oracle.ledger.is_empty());

    let h = harness();
    let doc: Value = serde_json::from_slice(&planted_bytes()).unwrap();
    let (id, _) = create(&h.app, doc).await;
    let (status, zero) = call(&h.app, Method::POST, &format!("/sessions/{id}/recommend?budget=0"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(zero["added"], json!([]));
    assert_eq!(zero["revision"], 0);

    let (status, run) = call(&h.app, Method::POST, &format!("/sessions/{id}/recommend?budget=200"), None).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    assert!(!run["added"].as_array().unwrap().is_empty());
    assert_eq!(run["revision"], 1);
    assert!(run["added"].as_array().unwrap().iter().all(|r| r["provenance"] == "agent"));
    let (_, view) = call(&h.app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["ledger"].as_array().unwrap().len(), run["added"].as_array().unwrap().len());
    assert!(view["metrics"]["ar"].as_f64().unwrap() > 0.0);
}

#[tokio::test]
async fn a_second_concurrent_run_conflicts() {
    let h = harness();
    let (id, _) = create(&h.app, small_doc()).await;
    let guard = h.store.begin_run(&id).unwrap();
    let (status, err) = call(&h.app, Method::POST, &format!("/sessions/{id}/recommend?budget=5"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "run_in_progress");
    drop(guard);
    let (status, _) = call(&h.app, Method::POST, &format!("/sessions/{id}/recommend?budget=5"), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn manual_insights_removal_and_entropy() {
    let h = harness();
    let (id, view) = create(&h.app, small_doc()).await;

    let (status, dom) = add(&h.app, &id, &view, "g", "x", "dominance").await;
    assert_eq!(status, StatusCode::CREATED, "{dom}");
    assert_eq!(dom["record"]["provenance"], "manual");
    assert_eq!(dom["record"]["kind"], "dominance");
    assert_eq!(dom["revision"], 1);

    let (status, err) = add(&h.app, &id, &view, "a", "x", "evenness").await;
    assert_eq!(status, StatusCode::CONFLICT, "{err}");
    let (status, _) = add(&h.app, &id, &view, "a", "y", "dominance").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let body = json!({"rowEntry": 99, "colEntry": 0, "kind": "trend"});
    let (status, _) = call(&h.app, Method::POST, &format!("/sessions/{id}/insights"), Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, even) = add(&h.app, &id, &view, "g", "y", "evenness").await;
    assert_eq!(status, StatusCode::CREATED);
    assert!((even["metrics"]["er"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(even["metrics"]["ar"], 1.0);

    let iid = even["record"]["id"].as_u64().unwrap();
    let (status, removed) = call(&h.app, Method::DELETE, &format!("/sessions/{id}/insights/{iid}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(removed["metrics"]["er"], 0.0);
    assert_eq!(removed["revision"], 3);

    let iid = dom["record"]["id"].as_u64().unwrap();
    let (_, removed) = call(&h.app, Method::DELETE, &format!("/sessions/{id}/insights/{iid}"), None).await;
    assert_eq!(removed["metrics"]["ar"], 0.0);
    let (status, _) = call(&h.app, Method::DELETE, &format!("/sessions/{id}/insights/{iid}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, view) = call(&h.app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["revision"], 4);
    assert_eq!(view["tombstones"].as_array().unwrap().len(), 2);
    assert!(view["viz"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(Value::is_null));
}

#[tokio::test]
async fn alternatives_and_replacement() {
    let h = harness();
    let (id, view) = create(&h.app, small_doc()).await;
    let (_, rec) = add(&h.app, &id, &view, "g", "y", "evenness").await;
    let iid = rec["record"]["id"].as_u64().unwrap();

    let (status, alts) = call(&h.app, Method::GET, &format!("/sessions/{id}/insights/{iid}/alternatives"), None).await;
    assert_eq!(status, StatusCode::OK);
    let alts = alts.as_array().unwrap();
    assert!(alts.iter().all(|a| a["kind"] != "evenness"));
    assert!(alts.iter().any(|a| a["kind"] == "top_two"));
    let scores: Vec<f64> = alts.iter().map(|a| a["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let uri = format!("/sessions/{id}/insights/{iid}/replace");
    let (status, _) = call(&h.app, Method::POST, &uri, Some(json!({"kind": "kurtosis"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, replaced) = call(&h.app, Method::POST, &uri, Some(json!({"kind": "top_two"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(replaced["revision"], 2);
    let head = &replaced["ledger"][0];
    assert_eq!(head["kind"], "top_two");
    assert_eq!(head["chart"], "radial");
    assert_eq!(head["provenance"], "manual");
    assert_eq!(head["block"], rec["record"]["block"]);

    let (status, _) = call(&h.app, Method::POST, &uri, Some(json!({"kind": 3}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&h.app, Method::GET, &format!("/sessions/{id}/insights/77/alternatives"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // single-cell block
    let (status, one) = add(&h.app, &id, &view, "a", "x", "dominance").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{one}");
}

#[tokio::test]
async fn export_round_trips_byte_stably() {
    let h = harness();
    let (id, view) = create(&h.app, small_doc()).await;
    let (status, empty) = call(&h.app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["insights"], json!([]));

    add(&h.app, &id, &view, "g", "x", "dominance").await;
    add(&h.app, &id, &view, "g", "y", "evenness").await;
    let (_, first) = raw(&h.app, Method::GET, &format!("/sessions/{id}/export"), Vec::new()).await;
    let (status, reimported) = raw(&h.app, Method::POST, "/sessions", first.clone()).await;
    assert_eq!(status, StatusCode::CREATED);
    let new_id = serde_json::from_slice::<Value>(&reimported).unwrap()["id"].as_str().unwrap().to_string();
    let (_, second) = raw(&h.app, Method::GET, &format!("/sessions/{new_id}/export"), Vec::new()).await;
    assert_eq!(first, second);

    // block references resolve against a fresh parse of the exported table
    let exported: Value = serde_json::from_slice(&first).unwrap();
    let mut doc = exported.clone();
    doc.as_object_mut().unwrap().remove("insights");
    let fresh = parse_table(&serde_json::to_vec(&doc).unwrap()).unwrap();
    for ins in exported["insights"].as_array().unwrap() {
        let block: tabsight_core::Block = serde_json::from_value(ins["block"].clone()).unwrap();
        assert_eq!(fresh.block(block.row_entry, block.col_entry).unwrap(), block);
    }

    // an overlapping import is refused
    let mut clash = exported.clone();
    let dup = clash["insights"][0].clone();
    let mut dup2 = dup.clone();
    dup2["id"] = json!(40);
    clash["insights"] = json!([dup, dup2]);
    let (status, _) = call(&h.app, Method::POST, "/sessions", Some(clash)).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn manual_transformations_clear_the_ledger_and_allow_sums() {
    let h = harness();
    let (id, view) = create(&h.app, small_doc()).await;
    add(&h.app, &id, &view, "g", "x", "dominance").await;
    let uri = format!("/sessions/{id}/transform");
    let (status, t) = call(&h.app, Method::POST, &uri, Some(json!({"action": "transpose"}))).await;
    assert_eq!(status, StatusCode::OK, "{t}");
    assert_eq!(t["ledger"], json!([]));
    assert_eq!(t["revision"], 2);
    assert_eq!(t["document"]["rowTree"]["label"], "C");
    let (status, _) = call(&h.app, Method::POST, &uri, Some(json!({"action": "move_row_up"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&h.app, Method::POST, &uri, Some(json!({"action": "transpose"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, agg) =
        call(&h.app, Method::POST, &uri, Some(json!({"action": "aggregate", "aggregate": "sum"}))).await;
    assert_eq!(status, StatusCode::OK, "{agg}");
    let values = agg["document"]["values"].to_string();
    assert!(values.contains("100"), "{values}");
}

#[tokio::test]
async fn tombstoned_pairs_are_not_proposed_again() {
    let h = harness();
    let doc: Value = serde_json::from_slice(&planted_bytes()).unwrap();
    let (id, _) = create(&h.app, doc).await;
    let (_, run) = call(&h.app, Method::POST, &format!("/sessions/{id}/recommend?budget=200"), None).await;
    let first = run["added"][0].clone();
    let iid = first["id"].as_u64().unwrap();
    call(&h.app, Method::DELETE, &format!("/sessions/{id}/insights/{iid}"), None).await;
    let (_, view) = call(&h.app, Method::GET, &format!("/sessions/{id}"), None).await;
    let tomb = view["tombstones"][0].clone();
    let (status, _) = call(&h.app, Method::POST, &format!("/sessions/{id}/recommend?budget=200"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, view) = call(&h.app, Method::GET, &format!("/sessions/{id}"), None).await;
    let path = |side: &str, id: u64| -> Vec<String> {
        let nodes = view[side].as_array().unwrap();
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = nodes.iter().find(|n| n["id"] == c).unwrap();
            out.insert(0, n["label"].as_str().unwrap().to_string());
            cur = n["parent"].as_u64();
        }
        out
    };
    for r in view["ledger"].as_array().unwrap() {
        let rp = path("rows", r["block"]["rowEntry"].as_u64().unwrap());
        let cp = path("cols", r["block"]["colEntry"].as_u64().unwrap());
        let same = json!(rp) == tomb["rowPath"] && json!(cp) == tomb["colPath"] && r["kind"] == tomb["kind"];
        assert!(!same, "tombstoned pair proposed again: {r}");
    }
}

#[tokio::test]
async fn sessions_survive_a_restart_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let open = || Arc::new(SessionStore::open(dir.path(), EngineConfig::default(), Recommender::Greedy).unwrap());
    let store = open();
    let app = router(store.clone());
    let doc: Value = serde_json::from_slice(&planted_bytes()).unwrap();
    let (id, _) = create(&app, doc).await;
    call(&app, Method::POST, &format!("/sessions/{id}/recommend?budget=60"), None).await;
    for _ in 0..9 {
        let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
        let Some(iid) = view["ledger"][0]["id"].as_u64() else { break };
        call(&app, Method::DELETE, &format!("/sessions/{id}/insights/{iid}"), None).await;
    }
    for _ in 0..SNAPSHOT_EVERY {
        let (status, _) =
            call(&app, Method::POST, &format!("/sessions/{id}/transform"), Some(json!({"action": "transpose"}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    call(&app, Method::POST, &format!("/sessions/{id}/recommend?budget=40"), None).await;
    let (_, before) = raw(&app, Method::GET, &format!("/sessions/{id}/export"), Vec::new()).await;
    let (_, live) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    drop(app);
    drop(store);

    let reopened = router(open());
    let (_, after) = raw(&reopened, Method::GET, &format!("/sessions/{id}/export"), Vec::new()).await;
    assert_eq!(before, after);
    let (_, view) = call(&reopened, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(view["revision"], live["revision"]);
    assert!(view["revision"].as_u64().unwrap() > SNAPSHOT_EVERY);

    let log = dir.path().join("sessions").join(&id).join("events.jsonl");
    let report = tabsight_service::replay(&log, &EngineConfig::default(), Some(&Recommender::Greedy)).unwrap();
    assert_eq!(report.revision, live["revision"].as_u64().unwrap());
    assert_eq!(report.reexecuted_runs, 2);
    assert_eq!(serde_json::to_vec(&report.final_state).unwrap(), before);
    let recorded = tabsight_service::replay(&log, &EngineConfig::default(), None).unwrap();
    assert_eq!(recorded.recorded_runs, 2);
    assert_eq!(recorded.metrics, report.metrics);
}
